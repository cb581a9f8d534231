//! Structural roles of line-graph nodes and the same-role co-trajectory
//! adjacency used by the attention branch.
//!
//! Roles come from recursive structural features clustered with k-means.
//! Every reduction here runs over values in a canonical (sorted) order, so
//! relabelling the lnodes permutes the output and changes nothing else.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linegraph::LineGraph;

pub const DEFAULT_ROLES: usize = 5;
pub const DEFAULT_RECURSIONS: usize = 2;
const BASE_FEATURES: usize = 5;
const PRUNE_CORRELATION: f64 = 0.99;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RoleAssignment {
    pub n_roles: usize,
    pub role_of: Vec<usize>,
}

/// Unordered same-role lnode pairs that share a trajectory, stored `(s, d)`
/// with `s < d`, sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoleAdjacency {
    pub pairs: Vec<(usize, usize)>,
}

impl RoleAdjacency {
    pub fn contains(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.pairs.binary_search(&key).is_ok()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Row indices in lexicographic order of the rows' values.
fn canonical_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&rows[a], &rows[b]));
    order
}

/// Recursive structural features per lnode, with near-duplicate columns removed.
pub fn structural_features(lg: &LineGraph, recursions: usize) -> Vec<Vec<f64>> {
    prune_correlated(recursive_features(lg, recursions))
}

/// Unpruned recursive features.
///
/// Base columns are in-degree, out-degree, weighted in-degree, weighted
/// out-degree and egonet edge count. Each of `recursions` rounds appends the
/// neighbor mean and neighbor sum of the columns added by the previous round,
/// giving `5 * (2^(recursions+1) - 1)` columns.
pub fn recursive_features(lg: &LineGraph, recursions: usize) -> Vec<Vec<f64>> {
    let n = lg.lnode_count();
    let edges = lg.ledges();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            let mut nb: Vec<usize> = lg.in_edges(v).iter().map(|&e| edges[e].src).collect();
            nb.extend(lg.out_edges(v).iter().map(|&e| edges[e].dst));
            nb
        })
        .collect();

    let mut in_ego = vec![usize::MAX; n];
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut w_in: Vec<f64> = lg.in_edges(v).iter().map(|&e| edges[e].weight).collect();
            let mut w_out: Vec<f64> = lg.out_edges(v).iter().map(|&e| edges[e].weight).collect();
            in_ego[v] = v;
            for &u in &neighbors[v] {
                in_ego[u] = v;
            }
            let ego_edges = std::iter::once(v)
                .chain(neighbors[v].iter().copied())
                .flat_map(|u| lg.out_edges(u).iter())
                .filter(|&&e| in_ego[edges[e].dst] == v)
                .count();
            vec![
                lg.in_edges(v).len() as f64,
                lg.out_edges(v).len() as f64,
                sorted_sum(&mut w_in),
                sorted_sum(&mut w_out),
                ego_edges as f64,
            ]
        })
        .collect();

    let mut new_start = 0;
    let mut new_len = BASE_FEATURES;
    let mut scratch = Vec::new();
    for _ in 0..recursions {
        for v in 0..n {
            let mut means = Vec::with_capacity(new_len);
            let mut sums = Vec::with_capacity(new_len);
            for c in new_start..new_start + new_len {
                scratch.clear();
                scratch.extend(neighbors[v].iter().map(|&u| rows[u][c]));
                let s = sorted_sum(&mut scratch);
                sums.push(s);
                means.push(if scratch.is_empty() {
                    0.0
                } else {
                    s / scratch.len() as f64
                });
            }
            rows[v].extend(means);
            rows[v].extend(sums);
        }
        new_start += new_len;
        new_len *= 2;
    }
    rows
}

/// Drops every column whose absolute correlation with a lower-indexed kept
/// column exceeds 0.99. Two constant columns count as duplicates; a constant
/// and a varying column do not.
fn prune_correlated(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let Some(width) = rows.first().map(Vec::len) else {
        return rows;
    };
    let order = canonical_order(&rows);
    let m = rows.len() as f64;
    let centered: Vec<Vec<f64>> = (0..width)
        .map(|c| {
            let mut col: Vec<f64> = order.iter().map(|&r| rows[r][c]).collect();
            let mean = sorted_sum(&mut col.clone()) / m;
            col.iter_mut().for_each(|x| *x -= mean);
            col
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let is_constant = |c: usize| norms[c] <= 1e-12 * (1.0 + centered[c].iter().map(|x| x.abs()).sum::<f64>());

    let mut kept: Vec<usize> = Vec::new();
    for c in 0..width {
        let duplicate = kept.iter().any(|&k| match (is_constant(k), is_constant(c)) {
            (true, true) => true,
            (false, false) => {
                let dot: f64 = centered[k].iter().zip(&centered[c]).map(|(a, b)| a * b).sum();
                (dot / (norms[k] * norms[c])).abs() > PRUNE_CORRELATION
            }
            _ => false,
        });
        if !duplicate {
            kept.push(c);
        }
    }
    rows.into_iter()
        .map(|r| kept.iter().map(|&c| r[c]).collect())
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ / Lloyd clustering of z-scored features.
///
/// Runs on the distinct feature rows in canonical order (weighted by
/// multiplicity), so the result depends only on the multiset of rows.
/// Clusters that end up empty are dropped and the survivors renumbered
/// `0..n_roles` in order of first appearance.
pub fn assign_roles(features: &[Vec<f64>], n_roles: usize, seed: u64) -> RoleAssignment {
    let n = features.len();
    if n == 0 {
        return RoleAssignment {
            n_roles: 1,
            role_of: Vec::new(),
        };
    }
    let width = features[0].len();
    let order = canonical_order(features);

    // z-score with canonical-order sums
    let mut normalized = vec![vec![0.0; width]; n];
    for c in 0..width {
        let mut col: Vec<f64> = order.iter().map(|&r| features[r][c]).collect();
        let mean = sorted_sum(&mut col.clone()) / n as f64;
        let mut sq: Vec<f64> = col.iter().map(|x| (x - mean) * (x - mean)).collect();
        let std = (sorted_sum(&mut sq) / n as f64).sqrt();
        for (pos, &r) in order.iter().enumerate() {
            normalized[r][c] = if std > 0.0 { (col[pos] - mean) / std } else { 0.0 };
        }
        col.clear();
    }

    // distinct points with multiplicities, canonical order
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    let mut point_of = vec![0; n];
    for &r in &order {
        match points.last() {
            Some(last) if cmp_rows(last, &normalized[r]).is_eq() => {
                *weight.last_mut().unwrap() += 1.0;
            }
            _ => {
                points.push(normalized[r].clone());
                weight.push(1.0);
            }
        }
        point_of[r] = points.len() - 1;
    }

    let k = n_roles.max(1).min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, w: &[f64]| -> Option<usize> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut target = rng.gen::<f64>() * total;
        for (i, &x) in w.iter().enumerate() {
            if target < x {
                return Some(i);
            }
            target -= x;
        }
        w.iter().rposition(|&x| x > 0.0)
    };
    let mut centers: Vec<Vec<f64>> = vec![points[pick(&mut rng, &weight).expect("non-empty")].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .zip(&weight)
            .map(|(p, &w)| {
                w * centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        match pick(&mut rng, &d2) {
            Some(i) => centers.push(points[i].clone()),
            None => break,
        }
    }

    let nearest = |p: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    };
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; width]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for ((p, &w), &a) in points.iter().zip(&weight).zip(&assignment) {
            mass[a] += w;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += w * x;
            }
        }
        centers = sums
            .into_iter()
            .zip(&mass)
            .filter(|(_, &m)| m > 0.0)
            .map(|(s, &m)| s.into_iter().map(|x| x / m).collect())
            .collect();
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let mut relabel = vec![usize::MAX; centers.len()];
    let mut next_id = 0;
    for &a in &assignment {
        if relabel[a] == usize::MAX {
            relabel[a] = next_id;
            next_id += 1;
        }
    }
    RoleAssignment {
        n_roles: next_id,
        role_of: point_of.iter().map(|&p| relabel[assignment[p]]).collect(),
    }
}

/// Same-role lnode pairs that appear together on at least one trajectory.
pub fn build_role_adjacency(lg: &LineGraph, assignment: &RoleAssignment) -> RoleAdjacency {
    let mut pairs = BTreeSet::new();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); assignment.n_roles];
    for traj in lg.trajectories() {
        buckets.iter_mut().for_each(Vec::clear);
        for &v in traj {
            buckets[assignment.role_of[v]].push(v);
        }
        for bucket in &buckets {
            for (i, &a) in bucket.iter().enumerate() {
                for &b in &bucket[i + 1..] {
                    if a != b {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    RoleAdjacency {
        pairs: pairs.into_iter().collect(),
    }
}

/// Features, roles and role adjacency in one call.
pub fn extract(lg: &LineGraph, n_roles: usize, seed: u64) -> (RoleAssignment, RoleAdjacency) {
    let features = structural_features(lg, DEFAULT_RECURSIONS);
    let roles = assign_roles(&features, n_roles, seed);
    let adjacency = build_role_adjacency(lg, &roles);
    (roles, adjacency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{generate_routing, NetworkSnapshot, NetworkTopology, OdPair, TrafficMatrix};

    fn line_graph(n: usize, links: Vec<(usize, usize)>, pairs: Vec<(usize, usize)>) -> LineGraph {
        let caps = vec![10.0; links.len()];
        let topology = NetworkTopology::new(n, links, caps).unwrap();
        let routing = generate_routing(&topology);
        let snap = NetworkSnapshot {
            topology,
            traffic: TrafficMatrix {
                pairs: pairs
                    .into_iter()
                    .map(|(src, dst)| OdPair {
                        src,
                        dst,
                        mean: 1.0,
                        peak: 1.0,
                    })
                    .collect(),
            },
            routing,
            performance: None,
        };
        LineGraph::build(&snap).unwrap()
    }

    #[test]
    fn unpruned_width_follows_recursion_count() {
        let lg = line_graph(3, vec![(0, 1), (1, 2)], vec![(0, 2)]);
        for (r, width) in [(0, 5), (1, 15), (2, 35), (3, 75)] {
            assert!(recursive_features(&lg, r).iter().all(|row| row.len() == width));
        }
        assert!(structural_features(&lg, 2)[0].len() < 35);
    }

    #[test]
    fn isolated_lnode_is_all_zero() {
        let lg = line_graph(2, vec![(0, 1)], vec![(0, 1)]);
        let f = structural_features(&lg, 2);
        for row in &f {
            assert!(row.iter().all(|&x| x == 0.0), "{row:?}");
        }
    }

    #[test]
    fn symmetric_triangle_gives_identical_rows() {
        let all: Vec<_> = (0..3)
            .flat_map(|s| (0..3).filter(move |&d| d != s).map(move |d| (s, d)))
            .collect();
        let lg = line_graph(3, vec![(0, 1), (1, 2), (0, 2)], all);
        let f = structural_features(&lg, 2);
        assert!(f.iter().all(|r| r == &f[0]));
        let roles = assign_roles(&f, 3, 1);
        assert_eq!(roles.n_roles, 1);
    }

    #[test]
    fn star_center_link_has_higher_degree() {
        // leaf links 1-0, 2-0, 3-0, 4-0 plus a tail 4-5
        let lg = line_graph(
            6,
            vec![(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)],
            vec![(1, 5)],
        );
        let f = recursive_features(&lg, 0);
        let into_center = lg.lnode_of(crate::netmodel::DirectedLink::new(1, 0)).unwrap();
        let out_of_tail = lg.lnode_of(crate::netmodel::DirectedLink::new(5, 4)).unwrap();
        // out-degree and egonet size
        assert_eq!(f[into_center][1], 3.0);
        assert_eq!(f[out_of_tail][1], 1.0);
        assert!(f[into_center][4] > f[out_of_tail][4]);
    }

    #[test]
    fn separated_clusters_split_cleanly() {
        let mut rows = vec![vec![0.0, 0.0]; 4];
        rows.extend(vec![vec![100.0, 100.0]; 4]);
        let roles = assign_roles(&rows, 2, 9);
        assert_eq!(roles.n_roles, 2);
        assert!(roles.role_of[..4].iter().all(|&r| r == roles.role_of[0]));
        assert!(roles.role_of[4..].iter().all(|&r| r == roles.role_of[4]));
        assert_ne!(roles.role_of[0], roles.role_of[4]);
    }

    #[test]
    fn clustering_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i * 7 % 11) as f64, (i * 3 % 5) as f64])
            .collect();
        assert_eq!(assign_roles(&rows, 4, 3), assign_roles(&rows, 4, 3));
    }

    #[test]
    fn role_adjacency_cases() {
        let lg = line_graph(4, vec![(0, 1), (1, 2), (2, 3)], vec![(0, 2)]);
        let a = lg.lnode_of(crate::netmodel::DirectedLink::new(0, 1)).unwrap();
        let b = lg.lnode_of(crate::netmodel::DirectedLink::new(1, 2)).unwrap();
        let c = lg.lnode_of(crate::netmodel::DirectedLink::new(2, 3)).unwrap();
        let same = RoleAssignment {
            n_roles: 1,
            role_of: vec![0; lg.lnode_count()],
        };
        let adj = build_role_adjacency(&lg, &same);
        assert!(adj.contains(a, b));
        assert!(!adj.contains(a, c));
        let mut split = same.clone();
        split.n_roles = 2;
        split.role_of[b] = 1;
        assert!(!build_role_adjacency(&lg, &split).contains(a, b));
    }
}
