//! Analytic ground truth: independent M/M/1 queues on every directed link.
//!
//! Arrival rate `lambda = load / packet_size` and service rate
//! `mu = capacity / packet_size` (packets/s). A link holds
//! `L = rho / (1 - rho)` packets on average and a packet spends
//! `W = 1 / (mu - lambda)` seconds in it; a path's latency is the sum of `W`
//! over its hops.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::netmodel::{DirectedLink, NetError, NetworkSnapshot, PerformanceMatrix};

pub const DEFAULT_PACKET_SIZE: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unstable link {link}: utilization {utilization} >= 1")]
    UnstableLink { link: DirectedLink, utilization: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLoad {
    pub link: DirectedLink,
    /// Sum of mean throughputs of every OD pair routed over the link.
    pub summed_traffic: f64,
    pub capacity: f64,
    pub utilization: f64,
}

/// Queue state of one directed link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQueue {
    pub link: DirectedLink,
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub occupancy: f64,
    pub delay: f64,
}

/// Per-link summed traffic for every directed link carrying at least one
/// trajectory, sorted by link.
pub fn compute_link_loads(snapshot: &NetworkSnapshot) -> Result<Vec<LinkLoad>, OracleError> {
    let mut sums: BTreeMap<DirectedLink, f64> = BTreeMap::new();
    for (i, pair) in snapshot.traffic.pairs.iter().enumerate() {
        for link in snapshot.trajectory(i)? {
            *sums.entry(link).or_insert(0.0) += pair.mean;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(link, summed_traffic)| {
            let capacity = snapshot
                .topology
                .capacity_of(link)
                .expect("trajectory links exist in the topology");
            LinkLoad {
                link,
                summed_traffic,
                capacity,
                utilization: summed_traffic / capacity,
            }
        })
        .collect())
}

/// M/M/1 state for each loaded link. Fails on the first link with `rho >= 1`.
pub fn link_queues(loads: &[LinkLoad], packet_size: f64) -> Result<Vec<LinkQueue>, OracleError> {
    loads
        .iter()
        .map(|l| {
            if !(l.utilization < 1.0) {
                return Err(OracleError::UnstableLink {
                    link: l.link,
                    utilization: l.utilization,
                });
            }
            let arrival_rate = l.summed_traffic / packet_size;
            let service_rate = l.capacity / packet_size;
            Ok(LinkQueue {
                link: l.link,
                arrival_rate,
                service_rate,
                occupancy: l.utilization / (1.0 - l.utilization),
                delay: 1.0 / (service_rate - arrival_rate),
            })
        })
        .collect()
}

/// Per-pair mean latency and per-link occupancy of a snapshot.
pub fn ground_truth(
    snapshot: &NetworkSnapshot,
    packet_size: f64,
) -> Result<PerformanceMatrix, OracleError> {
    let loads = compute_link_loads(snapshot)?;
    let queues = link_queues(&loads, packet_size)?;
    let delay: BTreeMap<DirectedLink, f64> = queues.iter().map(|q| (q.link, q.delay)).collect();
    let mut path_latency = Vec::with_capacity(snapshot.traffic.len());
    for i in 0..snapshot.traffic.len() {
        let latency = snapshot
            .trajectory(i)?
            .iter()
            .map(|l| delay[l])
            .sum::<f64>();
        path_latency.push(latency);
    }
    Ok(PerformanceMatrix {
        path_latency,
        link_occupancy: queues.iter().map(|q| (q.link, q.occupancy)).collect(),
    })
}

/// Returns a copy of `snapshot` with its performance filled in by the oracle.
pub fn label(snapshot: &NetworkSnapshot, packet_size: f64) -> Result<NetworkSnapshot, OracleError> {
    let performance = ground_truth(snapshot, packet_size)?;
    Ok(NetworkSnapshot {
        performance: Some(performance),
        ..snapshot.clone()
    })
}

/// Largest relative deviation from Little's law `L = lambda * W` over the
/// links of `performance`. Links without a load entry count as a full
/// mismatch.
pub fn little_check(loads: &[LinkLoad], performance: &PerformanceMatrix, packet_size: f64) -> f64 {
    let by_link: BTreeMap<DirectedLink, &LinkLoad> = loads.iter().map(|l| (l.link, l)).collect();
    performance
        .link_occupancy
        .iter()
        .map(|(link, occupancy)| match by_link.get(link) {
            None => 1.0,
            Some(l) => {
                let lambda = l.summed_traffic / packet_size;
                let mu = l.capacity / packet_size;
                let expected = lambda / (mu - lambda);
                (occupancy - expected).abs() / expected.abs()
            }
        })
        .fold(0.0, f64::max)
}
