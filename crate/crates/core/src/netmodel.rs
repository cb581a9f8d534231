//! Routing-network snapshots: topology, traffic, routing table and measured
//! performance, plus the synthetic generators and the JSON file format.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default capacity levels in traffic units/s.
pub const DEFAULT_CAPACITY_LEVELS: [f64; 4] = [10_000.0, 25_000.0, 40_000.0, 100_000.0];

/// Default utilization cap used by [`generate_traffic`].
pub const DEFAULT_MAX_UTILIZATION: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("could not generate a connected topology: {0}")]
    GenerationFailed(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("routing loop while walking from {src} toward {dst} (revisited node {node})")]
    RoutingLoop { src: usize, dst: usize, node: usize },
    #[error("no next hop from {at} toward {dst}")]
    MissingRoute { at: usize, dst: usize },
    #[error("pair index {index} out of range ({len} pairs)")]
    PairIndex { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, NetError>;

/// A directed link `from -> to` of the base graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DirectedLink {
    pub from: usize,
    pub to: usize,
}

impl DirectedLink {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    pub fn reversed(self) -> Self {
        Self {
            from: self.to,
            to: self.from,
        }
    }
}

impl fmt::Display for DirectedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

impl std::str::FromStr for DirectedLink {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| format!("expected \"u->v\", got {s:?}"))?;
        let from = a.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        let to = b.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        Ok(Self { from, to })
    }
}

/// Undirected topology with per-link capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    n: usize,
    links: Vec<(usize, usize)>,
    capacity: Vec<f64>,
    node_attrs: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    link_index: HashMap<(usize, usize), usize>,
}

impl NetworkTopology {
    /// Builds and validates a topology. Links are stored with `u < v`.
    pub fn new(n: usize, links: Vec<(usize, usize)>, capacity: Vec<f64>) -> Result<Self> {
        Self::with_attrs(n, links, capacity, vec![Vec::new(); n])
    }

    pub fn with_attrs(
        n: usize,
        links: Vec<(usize, usize)>,
        capacity: Vec<f64>,
        node_attrs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if links.len() != capacity.len() {
            return Err(NetError::Validation(format!(
                "{} links but {} capacities",
                links.len(),
                capacity.len()
            )));
        }
        if node_attrs.len() != n {
            return Err(NetError::Validation(format!(
                "{} node attribute rows for {n} nodes",
                node_attrs.len()
            )));
        }
        let mut link_index = HashMap::with_capacity(links.len());
        let mut neighbors = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(links.len());
        for (i, (&(u, v), &c)) in links.iter().zip(&capacity).enumerate() {
            if u >= n || v >= n {
                return Err(NetError::Validation(format!(
                    "link ({u},{v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(NetError::Validation(format!("self-loop link ({u},{v})")));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(NetError::Validation(format!(
                    "link capacity > 0 violated on link ({u},{v}): {c}"
                )));
            }
            let key = (u.min(v), u.max(v));
            if link_index.insert(key, i).is_some() {
                return Err(NetError::Validation(format!("duplicate link ({u},{v})")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
            normalized.push(key);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let topo = Self {
            n,
            links: normalized,
            capacity,
            node_attrs,
            neighbors,
            link_index,
        };
        if !topo.is_connected() {
            return Err(NetError::Validation("topology is not connected".into()));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacity
    }

    pub fn node_attrs(&self) -> &[Vec<f64>] {
        &self.node_attrs
    }

    /// Sorted neighbor ids of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn has_link(&self, u: usize, v: usize) -> bool {
        self.link_index.contains_key(&(u.min(v), u.max(v)))
    }

    /// Capacity of the undirected link carrying `link`, if it exists.
    pub fn capacity_of(&self, link: DirectedLink) -> Option<f64> {
        let key = (link.from.min(link.to), link.from.max(link.to));
        self.link_index.get(&key).map(|&i| self.capacity[i])
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.links.len() as f64 / self.n as f64
    }

    fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }
}

/// One origin-destination demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdPair {
    pub src: usize,
    pub dst: usize,
    pub mean: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrafficMatrix {
    pub pairs: Vec<OdPair>,
}

impl TrafficMatrix {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Dense next-hop table, entry `(current, destination)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    n: usize,
    next_hop: Vec<Option<usize>>,
}

impl RoutingMatrix {
    pub fn from_table(n: usize, next_hop: Vec<Option<usize>>) -> Result<Self> {
        if next_hop.len() != n * n {
            return Err(NetError::Validation(format!(
                "routing table has {} entries, expected {}",
                next_hop.len(),
                n * n
            )));
        }
        Ok(Self { n, next_hop })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn next_hop(&self, current: usize, dst: usize) -> Option<usize> {
        self.next_hop[current * self.n + dst]
    }
}

/// Ground-truth performance of a snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceMatrix {
    /// Mean latency in seconds, one entry per OD pair.
    pub path_latency: Vec<f64>,
    /// Mean queue occupancy per directed link in use, sorted by link.
    pub link_occupancy: Vec<(DirectedLink, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    pub topology: NetworkTopology,
    pub traffic: TrafficMatrix,
    pub routing: RoutingMatrix,
    pub performance: Option<PerformanceMatrix>,
}

impl NetworkSnapshot {
    /// Checks every cross-reference and the routing/traffic/performance invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.topology.node_count();
        if self.routing.node_count() != n {
            return Err(NetError::Validation(format!(
                "routing covers {} nodes, topology has {n}",
                self.routing.node_count()
            )));
        }
        for c in 0..n {
            for d in 0..n {
                match self.routing.next_hop(c, d) {
                    None if c != d => {
                        return Err(NetError::Validation(format!(
                            "next_hop({c},{d}) is undefined"
                        )))
                    }
                    Some(h) if c == d => {
                        return Err(NetError::Validation(format!(
                            "diagonal next_hop({c},{c}) = {h}, expected -1"
                        )))
                    }
                    Some(h) if !self.topology.has_link(c, h) => {
                        return Err(NetError::Validation(format!(
                            "next_hop({c},{d}) = {h} is not a neighbor of {c}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        // loop-freedom: each walk must end within n steps
        for c in 0..n {
            for d in 0..n {
                if c != d {
                    walk(&self.routing, c, d)?;
                }
            }
        }
        for (i, p) in self.traffic.pairs.iter().enumerate() {
            if p.src >= n || p.dst >= n {
                return Err(NetError::Validation(format!(
                    "traffic pair {i} references a node outside 0..{n}"
                )));
            }
            if p.src == p.dst {
                return Err(NetError::Validation(format!(
                    "traffic pair {i} has source == destination ({})",
                    p.src
                )));
            }
            if !(p.mean > 0.0) || !p.mean.is_finite() {
                return Err(NetError::Validation(format!(
                    "traffic pair {i}: mean_throughput > 0 violated ({})",
                    p.mean
                )));
            }
            if !(p.peak >= p.mean) || !p.peak.is_finite() {
                return Err(NetError::Validation(format!(
                    "traffic pair {i}: peak_throughput >= mean_throughput violated ({} < {})",
                    p.peak, p.mean
                )));
            }
        }
        if let Some(perf) = &self.performance {
            if perf.path_latency.len() != self.traffic.len() {
                return Err(NetError::Validation(format!(
                    "{} path latencies for {} OD pairs",
                    perf.path_latency.len(),
                    self.traffic.len()
                )));
            }
            if let Some(i) = perf.path_latency.iter().position(|&l| !(l > 0.0)) {
                return Err(NetError::Validation(format!(
                    "path latency > 0 violated for pair {i}"
                )));
            }
            for (link, occ) in &perf.link_occupancy {
                if !self.topology.has_link(link.from, link.to) {
                    return Err(NetError::Validation(format!(
                        "occupancy reported for unknown link {link}"
                    )));
                }
                if !(*occ >= 0.0) {
                    return Err(NetError::Validation(format!(
                        "occupancy >= 0 violated on {link}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ordered directed links traversed by OD pair `pair_index`.
    pub fn trajectory(&self, pair_index: usize) -> Result<Vec<DirectedLink>> {
        let pair = self
            .traffic
            .pairs
            .get(pair_index)
            .ok_or(NetError::PairIndex {
                index: pair_index,
                len: self.traffic.len(),
            })?;
        walk(&self.routing, pair.src, pair.dst)
    }

    /// Trajectories of every OD pair, in pair order.
    pub fn trajectories(&self) -> Result<Vec<Vec<DirectedLink>>> {
        (0..self.traffic.len()).map(|i| self.trajectory(i)).collect()
    }
}

/// Follows the next-hop table from `src` to `dst`.
pub fn walk(routing: &RoutingMatrix, src: usize, dst: usize) -> Result<Vec<DirectedLink>> {
    let n = routing.node_count();
    let mut visited = vec![false; n];
    let mut hops = Vec::new();
    let mut at = src;
    visited[at] = true;
    while at != dst {
        let next = routing
            .next_hop(at, dst)
            .ok_or(NetError::MissingRoute { at, dst })?;
        if next >= n || visited[next] {
            return Err(NetError::RoutingLoop {
                src,
                dst,
                node: next,
            });
        }
        visited[next] = true;
        hops.push(DirectedLink::new(at, next));
        at = next;
    }
    Ok(hops)
}

/// Random connected topology: a random spanning tree filled up with uniformly
/// chosen extra links until the requested mean degree is reached.
pub fn generate_topology(
    n: usize,
    target_mean_degree: f64,
    capacity_levels: &[f64],
    seed: u64,
) -> Result<NetworkTopology> {
    if n < 3 {
        return Err(NetError::InvalidParameter(format!("need n >= 3, got {n}")));
    }
    if !(target_mean_degree > 0.0) || target_mean_degree > (n - 1) as f64 {
        return Err(NetError::InvalidParameter(format!(
            "mean degree {target_mean_degree} infeasible for {n} nodes (max {})",
            n - 1
        )));
    }
    if capacity_levels.is_empty() || capacity_levels.iter().any(|&c| !(c > 0.0)) {
        return Err(NetError::InvalidParameter(
            "capacity levels must be non-empty and positive".into(),
        ));
    }
    let max_links = n * (n - 1) / 2;
    let wanted = ((n as f64 * target_mean_degree / 2.0).round() as usize).clamp(n - 1, max_links);
    let achieved = 2.0 * wanted as f64 / n as f64;
    if (achieved - target_mean_degree).abs() > 0.15 * target_mean_degree {
        return Err(NetError::GenerationFailed(format!(
            "closest connected mean degree {achieved:.3} is outside 15% of {target_mean_degree}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut present = vec![false; n * n];
    let mut links = Vec::with_capacity(wanted);
    let mut add = |u: usize, v: usize, links: &mut Vec<(usize, usize)>| {
        let (a, b) = (u.min(v), u.max(v));
        present[a * n + b] = true;
        links.push((a, b));
    };
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        add(order[i], parent, &mut links);
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !present[a * n + b] {
                candidates.push((a, b));
            }
        }
    }
    candidates.shuffle(&mut rng);
    let extra = wanted - links.len();
    links.extend(candidates.into_iter().take(extra));
    links.sort_unstable();
    let capacity = links
        .iter()
        .map(|_| capacity_levels[rng.gen_range(0..capacity_levels.len())])
        .collect();
    NetworkTopology::new(n, links, capacity)
}

/// All-pairs hop-count shortest-path routing; ties go to the smallest neighbor id.
pub fn generate_routing(topology: &NetworkTopology) -> RoutingMatrix {
    let n = topology.node_count();
    let mut next_hop = vec![None; n * n];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for d in 0..n {
        dist.fill(usize::MAX);
        dist[d] = 0;
        queue.push_back(d);
        while let Some(u) = queue.pop_front() {
            for &v in topology.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for c in 0..n {
            if c == d {
                continue;
            }
            next_hop[c * n + d] = topology
                .neighbors(c)
                .iter()
                .copied()
                .find(|&w| dist[w] + 1 == dist[c]);
        }
    }
    RoutingMatrix { n, next_hop }
}

/// Random OD demands, rescaled so the busiest directed link sits exactly at
/// `max_utilization`.
///
/// Pairs are distinct while `k <= n(n-1)`; beyond that every ordering is used
/// and the remainder are duplicates with independent throughputs.
pub fn generate_traffic(
    topology: &NetworkTopology,
    routing: &RoutingMatrix,
    k: usize,
    max_utilization: f64,
    seed: u64,
) -> Result<TrafficMatrix> {
    if !(max_utilization > 0.0 && max_utilization < 1.0) {
        return Err(NetError::InvalidParameter(format!(
            "max_utilization must be in (0,1), got {max_utilization}"
        )));
    }
    let n = topology.node_count();
    if n < 2 || k == 0 {
        return Err(NetError::InvalidParameter(format!(
            "cannot place {k} OD pairs on {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orderings: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d)))
        .collect();
    let mut chosen: Vec<(usize, usize)> = if k <= orderings.len() {
        orderings.shuffle(&mut rng);
        orderings.truncate(k);
        orderings.sort_unstable();
        orderings
    } else {
        let mut all = orderings.clone();
        while all.len() < k {
            all.push(orderings[rng.gen_range(0..orderings.len())]);
        }
        all
    };
    chosen.shrink_to_fit();

    let mut pairs: Vec<OdPair> = chosen
        .iter()
        .map(|&(src, dst)| OdPair {
            src,
            dst,
            mean: rng.gen_range(0.1..1.0),
            peak: 0.0,
        })
        .collect();

    let mut load: HashMap<DirectedLink, f64> = HashMap::new();
    for p in &pairs {
        for link in walk(routing, p.src, p.dst)? {
            *load.entry(link).or_insert(0.0) += p.mean;
        }
    }
    let busiest = load
        .iter()
        .map(|(&l, &t)| t / topology.capacity_of(l).expect("routed link exists"))
        .fold(0.0_f64, f64::max);
    let mut scale = max_utilization / busiest;
    // rounding can push the busiest link a hair past the cap
    loop {
        let over = load.iter().any(|(&l, &t)| {
            t * scale > max_utilization * topology.capacity_of(l).expect("routed link exists")
        });
        if !over {
            break;
        }
        scale *= 1.0 - 1e-12;
    }
    for p in &mut pairs {
        p.mean *= scale;
        p.peak = p.mean * rng.gen_range(1.0..=3.0);
    }
    Ok(TrafficMatrix { pairs })
}

// ---------------------------------------------------------------------------
// JSON wire format

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTopology {
    n: usize,
    links: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_attrs: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePerformance {
    path_latency: Vec<f64>,
    link_occupancy: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSnapshot {
    topology: WireTopology,
    traffic: Vec<(usize, usize, f64, f64)>,
    routing: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    performance: Option<WirePerformance>,
}

impl From<&NetworkSnapshot> for WireSnapshot {
    fn from(s: &NetworkSnapshot) -> Self {
        let topo = &s.topology;
        let n = topo.node_count();
        let attrs_present = topo.node_attrs.iter().any(|a| !a.is_empty());
        WireSnapshot {
            topology: WireTopology {
                n,
                links: topo
                    .links
                    .iter()
                    .zip(&topo.capacity)
                    .map(|(&(u, v), &c)| (u, v, c))
                    .collect(),
                node_attrs: attrs_present.then(|| topo.node_attrs.clone()),
            },
            traffic: s
                .traffic
                .pairs
                .iter()
                .map(|p| (p.src, p.dst, p.mean, p.peak))
                .collect(),
            routing: (0..n)
                .map(|c| {
                    (0..n)
                        .map(|d| s.routing.next_hop(c, d).map_or(-1, |h| h as i64))
                        .collect()
                })
                .collect(),
            performance: s.performance.as_ref().map(|p| WirePerformance {
                path_latency: p.path_latency.clone(),
                link_occupancy: p
                    .link_occupancy
                    .iter()
                    .map(|(l, o)| (l.to_string(), *o))
                    .collect(),
            }),
        }
    }
}

impl TryFrom<WireSnapshot> for NetworkSnapshot {
    type Error = NetError;

    fn try_from(w: WireSnapshot) -> Result<Self> {
        let n = w.topology.n;
        let (links, capacity): (Vec<_>, Vec<_>) =
            w.topology.links.iter().map(|&(u, v, c)| ((u, v), c)).unzip();
        let attrs = w.topology.node_attrs.unwrap_or_else(|| vec![Vec::new(); n]);
        let topology = NetworkTopology::with_attrs(n, links, capacity, attrs)?;
        if w.routing.len() != n || w.routing.iter().any(|row| row.len() != n) {
            return Err(NetError::Validation(format!("routing must be a {n}x{n} array")));
        }
        let mut table = Vec::with_capacity(n * n);
        for (c, row) in w.routing.iter().enumerate() {
            for (d, &h) in row.iter().enumerate() {
                table.push(match h {
                    -1 => None,
                    h if h >= 0 && (h as usize) < n => Some(h as usize),
                    h => {
                        return Err(NetError::Validation(format!(
                            "next_hop({c},{d}) = {h} is not a node id"
                        )))
                    }
                });
            }
        }
        let routing = RoutingMatrix::from_table(n, table)?;
        let traffic = TrafficMatrix {
            pairs: w
                .traffic
                .into_iter()
                .map(|(src, dst, mean, peak)| OdPair {
                    src,
                    dst,
                    mean,
                    peak,
                })
                .collect(),
        };
        let performance = match w.performance {
            None => None,
            Some(p) => {
                let mut occ = Vec::with_capacity(p.link_occupancy.len());
                for (key, value) in p.link_occupancy {
                    let link = key.parse::<DirectedLink>().map_err(NetError::Validation)?;
                    occ.push((link, value));
                }
                Some(PerformanceMatrix {
                    path_latency: p.path_latency,
                    link_occupancy: occ,
                })
            }
        };
        let snapshot = NetworkSnapshot {
            topology,
            traffic,
            routing,
            performance,
        };
        snapshot.validate()?;
        Ok(snapshot)
    }
}

fn parse_error(e: serde_json::Error, line_offset: usize) -> NetError {
    NetError::Parse {
        line: e.line() + line_offset,
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates one snapshot document.
pub fn load_snapshot(bytes: &[u8]) -> Result<NetworkSnapshot> {
    let wire: WireSnapshot = serde_json::from_slice(bytes).map_err(|e| parse_error(e, 0))?;
    NetworkSnapshot::try_from(wire)
}

/// Serializes a snapshot as a single-line JSON document.
pub fn save_snapshot(snapshot: &NetworkSnapshot) -> Vec<u8> {
    serde_json::to_vec(&WireSnapshot::from(snapshot)).expect("snapshot serializes")
}

/// Parses a JSON Lines dataset; blank lines are skipped.
pub fn load_dataset(text: &str) -> Result<Vec<NetworkSnapshot>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireSnapshot =
            serde_json::from_str(line).map_err(|e| parse_error(e, i))?;
        out.push(NetworkSnapshot::try_from(wire).map_err(|e| match e {
            NetError::Validation(msg) => NetError::Validation(format!("line {}: {msg}", i + 1)),
            other => other,
        })?);
    }
    Ok(out)
}

pub fn save_dataset(snapshots: &[NetworkSnapshot]) -> String {
    let mut out = String::new();
    for s in snapshots {
        out.push_str(std::str::from_utf8(&save_snapshot(s)).expect("json is utf-8"));
        out.push('\n');
    }
    out
}
