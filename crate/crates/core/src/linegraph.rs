//! Directed line graph of a routed network.
//!
//! Every directed link that some routing entry uses becomes a line-graph
//! node ("lnode"); lnode `u->v` has an edge to `v->w` for each `w != u`.
//! Node features and edge weights are computed from the offered traffic
//! alone, so the transform works on snapshots without ground truth.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{DirectedLink, NetError, NetworkSnapshot};
use crate::oracle::{compute_link_loads, LinkLoad, OracleError};

/// Capacities are divided by this before entering the feature table.
pub const CAPACITY_SCALE: f64 = 100_000.0;

/// Width of a line-graph feature row.
pub const FEATURE_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineGraphError {
    #[error("lnode index {index} out of range ({len} lnodes)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<OracleError> for LineGraphError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Net(n) => LineGraphError::Net(n),
            // load computation never checks stability
            OracleError::UnstableLink { .. } => unreachable!("loads do not check stability"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineGraph {
    lnodes: Vec<DirectedLink>,
    index: HashMap<DirectedLink, usize>,
    ledges: Vec<LineEdge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    /// `[utilization, capacity / CAPACITY_SCALE, summed peak / capacity]` per lnode.
    features: Vec<[f64; FEATURE_DIM]>,
    capacity: Vec<f64>,
    load: Vec<f64>,
    trajectories: Vec<Vec<usize>>,
}

impl LineGraph {
    /// Builds structure, trajectories, features and weights for `snapshot`.
    pub fn build(snapshot: &NetworkSnapshot) -> Result<Self, LineGraphError> {
        let topo = &snapshot.topology;
        let n = topo.node_count();
        let mut lnodes = Vec::new();
        for x in 0..n {
            for &y in topo.neighbors(x) {
                let valid = (0..n).any(|d| snapshot.routing.next_hop(x, d) == Some(y));
                if valid {
                    lnodes.push(DirectedLink::new(x, y));
                }
            }
        }
        let index: HashMap<DirectedLink, usize> =
            lnodes.iter().enumerate().map(|(i, &l)| (l, i)).collect();

        let mut ledges = Vec::new();
        let mut out_edges = vec![Vec::new(); lnodes.len()];
        let mut in_edges = vec![Vec::new(); lnodes.len()];
        for (s, link) in lnodes.iter().enumerate() {
            for &w in topo.neighbors(link.to) {
                if w == link.from {
                    continue;
                }
                if let Some(&d) = index.get(&DirectedLink::new(link.to, w)) {
                    out_edges[s].push(ledges.len());
                    in_edges[d].push(ledges.len());
                    ledges.push(LineEdge {
                        src: s,
                        dst: d,
                        weight: 0.0,
                    });
                }
            }
        }

        let mut trajectories = Vec::with_capacity(snapshot.traffic.len());
        for i in 0..snapshot.traffic.len() {
            let hops = snapshot.trajectory(i)?;
            trajectories.push(hops.iter().map(|l| index[l]).collect());
        }
        let capacity = lnodes
            .iter()
            .map(|&l| topo.capacity_of(l).expect("lnode is a topology link"))
            .collect();

        let mut lg = LineGraph {
            load: vec![0.0; lnodes.len()],
            features: vec![[0.0; FEATURE_DIM]; lnodes.len()],
            lnodes,
            index,
            ledges,
            out_edges,
            in_edges,
            capacity,
            trajectories,
        };
        let loads = compute_link_loads(snapshot)?;
        lg.features = node_features(&lg, snapshot, &loads);
        let weights = edge_weights(&lg, snapshot, &loads);
        for (e, w) in lg.ledges.iter_mut().zip(weights) {
            e.weight = w;
        }
        for l in &loads {
            lg.load[lg.index[&l.link]] = l.summed_traffic;
        }
        Ok(lg)
    }

    pub fn lnode_count(&self) -> usize {
        self.lnodes.len()
    }

    pub fn lnodes(&self) -> &[DirectedLink] {
        &self.lnodes
    }

    pub fn ledges(&self) -> &[LineEdge] {
        &self.ledges
    }

    /// Indices into [`LineGraph::ledges`] leaving lnode `i`.
    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    pub fn features(&self) -> &[[f64; FEATURE_DIM]] {
        &self.features
    }

    pub fn capacity(&self, i: usize) -> f64 {
        self.capacity[i]
    }

    /// Summed mean traffic through lnode `i`.
    pub fn load(&self, i: usize) -> f64 {
        self.load[i]
    }

    /// Lnode sequence of every OD pair, in traffic-matrix order.
    pub fn trajectories(&self) -> &[Vec<usize>] {
        &self.trajectories
    }

    /// Forward map: lnode index of a base-graph directed link.
    pub fn lnode_of(&self, link: DirectedLink) -> Option<usize> {
        self.index.get(&link).copied()
    }

    /// The base-graph directed link an lnode stands for.
    pub fn project_back(&self, index: usize) -> Result<DirectedLink, LineGraphError> {
        self.lnodes
            .get(index)
            .copied()
            .ok_or(LineGraphError::IndexOutOfRange {
                index,
                len: self.lnodes.len(),
            })
    }

    /// Debug dump with the documented field names.
    pub fn dump(&self, roles: Option<&[usize]>) -> LineGraphDump {
        LineGraphDump {
            lnodes: self.lnodes.iter().map(|l| (l.from, l.to)).collect(),
            ledges: self.ledges.iter().map(|e| (e.src, e.dst, e.weight)).collect(),
            features: self.features.iter().map(|f| f.to_vec()).collect(),
            trajectories: self.trajectories.clone(),
            roles: roles.map(<[usize]>::to_vec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineGraphDump {
    pub lnodes: Vec<(usize, usize)>,
    pub ledges: Vec<(usize, usize, f64)>,
    pub features: Vec<Vec<f64>>,
    pub trajectories: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<usize>>,
}

/// Feature rows: channel 0 is summed traffic over capacity; lnodes carrying no
/// traffic get zeros in channels 0 and 2.
pub fn node_features(
    lg: &LineGraph,
    snapshot: &NetworkSnapshot,
    loads: &[LinkLoad],
) -> Vec<[f64; FEATURE_DIM]> {
    let mut peak = vec![0.0; lg.lnode_count()];
    for (pair, traj) in snapshot.traffic.pairs.iter().zip(lg.trajectories()) {
        for &v in traj {
            peak[v] += pair.peak;
        }
    }
    let mut utilization = vec![0.0; lg.lnode_count()];
    for l in loads {
        if let Some(i) = lg.lnode_of(l.link) {
            utilization[i] = l.summed_traffic / lg.capacity(i);
        }
    }
    (0..lg.lnode_count())
        .map(|i| {
            let c = lg.capacity(i);
            [utilization[i], c / CAPACITY_SCALE, peak[i] / c]
        })
        .collect()
}

/// Weight of each ledge `(s, d)`: the share of `s`'s traffic that continues
/// onto `d`, times `capacity(s) / capacity(d)`. Zero when `s` carries nothing.
pub fn edge_weights(lg: &LineGraph, snapshot: &NetworkSnapshot, loads: &[LinkLoad]) -> Vec<f64> {
    let mut load = vec![0.0; lg.lnode_count()];
    for l in loads {
        if let Some(i) = lg.lnode_of(l.link) {
            load[i] = l.summed_traffic;
        }
    }
    let mut continuing: HashMap<(usize, usize), f64> = HashMap::new();
    for (pair, traj) in snapshot.traffic.pairs.iter().zip(lg.trajectories()) {
        for hop in traj.windows(2) {
            *continuing.entry((hop[0], hop[1])).or_insert(0.0) += pair.mean;
        }
    }
    lg.ledges()
        .iter()
        .map(|e| {
            let ts = load[e.src];
            if ts == 0.0 {
                return 0.0;
            }
            let shared = continuing.get(&(e.src, e.dst)).copied().unwrap_or(0.0);
            shared / ts * (lg.capacity(e.src) / lg.capacity(e.dst))
        })
        .collect()
}
