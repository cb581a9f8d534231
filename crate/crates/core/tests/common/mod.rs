//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod suites;

use std::collections::{BTreeMap, BTreeSet};

use netlat::dataset::{generate_snapshot, GeneratorConfig, PairCount};
use netlat::netmodel::NetworkSnapshot;
use netlat::tensor::{Graph, Matrix, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A labelled snapshot with `n` in `n_lo..=n_hi`, random degree and pair count.
pub fn random_snapshot(n_lo: usize, n_hi: usize, seed: u64) -> NetworkSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(n_lo..=n_hi);
        let max_deg = (n - 1) as f64;
        let degree = if max_deg <= 2.0 { max_deg } else { rng.gen_range(2.0..=max_deg.min(6.0)) };
        let k = rng.gen_range(1..=n * (n - 1));
        let cfg = GeneratorConfig {
            n_min: n,
            n_max: n,
            mean_degree: degree,
            pairs: if rng.gen_bool(0.3) { PairCount::All } else { PairCount::Fixed(k) },
            ..GeneratorConfig::default()
        };
        if let Ok(s) = generate_snapshot(&cfg, rng.gen()) {
            return s;
        }
    }
}

/// Route of a pair by repeatedly following the next-hop table.
pub fn route(s: &NetworkSnapshot, src: usize, dst: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut at = src;
    while at != dst {
        let next = s.routing.next_hop(at, dst).expect("route exists");
        out.push((at, next));
        at = next;
        assert!(out.len() <= s.topology.node_count(), "routing loop");
    }
    out
}

pub fn capacity(s: &NetworkSnapshot, (u, v): (usize, usize)) -> f64 {
    let links = s.topology.links();
    let i = links
        .iter()
        .position(|&(a, b)| (a, b) == (u.min(v), u.max(v)))
        .expect("link exists");
    s.topology.capacities()[i]
}

/// Directed links `(x, y)` such that some destination routes `x` through `y`.
pub fn valid_links(s: &NetworkSnapshot) -> BTreeSet<(usize, usize)> {
    let n = s.topology.node_count();
    let mut out = BTreeSet::new();
    for x in 0..n {
        for d in 0..n {
            if let Some(y) = s.routing.next_hop(x, d) {
                out.insert((x, y));
            }
        }
    }
    out
}

/// Summed mean traffic per directed link.
pub fn link_traffic(s: &NetworkSnapshot) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for p in &s.traffic.pairs {
        for hop in route(s, p.src, p.dst) {
            *out.entry(hop).or_insert(0.0) += p.mean;
        }
    }
    out
}

/// Edge weight per consecutive non-reversing pair of valid links, evaluated
/// from its definition: continuing traffic over the first link's traffic
/// times the capacity ratio.
pub fn edge_weights(s: &NetworkSnapshot) -> BTreeMap<((usize, usize), (usize, usize)), f64> {
    let valid = valid_links(s);
    let traffic = link_traffic(s);
    let mut out = BTreeMap::new();
    for &a in &valid {
        for &b in &valid {
            if a.1 != b.0 || b.1 == a.0 {
                continue;
            }
            let mut both = 0.0;
            for p in &s.traffic.pairs {
                let r = route(s, p.src, p.dst);
                if r.windows(2).any(|w| w[0] == a && w[1] == b) {
                    both += p.mean;
                }
            }
            let ts = traffic.get(&a).copied().unwrap_or(0.0);
            let w = if ts == 0.0 { 0.0 } else { both / ts * capacity(s, a) / capacity(s, b) };
            out.insert((a, b), w);
        }
    }
    out
}

pub fn dense(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, j, v) in entries {
        m[i][j] += v;
    }
    m
}

pub fn first_order(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (a[i][j] + a[j][i]) / 2.0).collect()).collect()
}

pub fn second_in(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for k in 0..n {
        let total: f64 = a[k].iter().sum();
        if total == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] += a[k][i] * a[k][j] / total;
            }
        }
    }
    out
}

pub fn second_out(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for k in 0..n {
        let total: f64 = (0..n).map(|v| a[v][k]).sum();
        if total == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] += a[i][k] * a[j][k] / total;
            }
        }
    }
    out
}

/// `D^-1/2 (A + I) D^-1/2`.
pub fn sym_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut t: Vec<Vec<f64>> = a.to_vec();
    for (i, row) in t.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = t.iter().map(|r| r.iter().sum::<f64>()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| t[i][j] / (d[i].sqrt() * d[j].sqrt())).collect())
        .collect()
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect())
        .collect()
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Same-role pairs that share at least one trajectory.
pub fn role_pairs(role_of: &[usize], trajectories: &[Vec<usize>]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for t in trajectories {
        for &a in t {
            for &b in t {
                if a < b && role_of[a] == role_of[b] {
                    out.insert((a, b));
                }
            }
        }
    }
    out
}

/// Gradients with both norms below this are treated as zero; central
/// differences at `eps = 1e-5` carry roundoff around `1e-11`.
pub const GRADIENT_FLOOR: f64 = 1e-8;

/// Largest relative error `|a - n| / max(|a|, |n|)` between the analytic
/// gradient and central differences, per parameter tensor (2-norms).
/// `build` must produce the same output for the same store.
pub fn gradient_error(store: &mut ParamStore, eps: f64, seed: u64, build: impl Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut g = Graph::new();
        let out = build(&mut g, store);
        let (r, c) = g.value(out).shape();
        Matrix::uniform(r, c, 1.0, &mut rng)
    };
    let loss_of = |store: &ParamStore, g: &mut Graph| {
        let out = build(g, store);
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p).unwrap();
        g.sum(prod)
    };
    let mut g = Graph::new();
    let l = loss_of(store, &mut g);
    store.zero_grad();
    g.backward(l, store).unwrap();
    let analytic: Vec<(String, Matrix)> = store
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = loss_of(store, &mut g);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (name, grad) in analytic {
        let len = grad.data().len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(&name).unwrap().value.data()[i];
            store.value_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let up = eval(store);
            store.value_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let down = eval(store);
            store.value_mut(&name).unwrap().data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let diff: f64 = grad.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = grad.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale > GRADIENT_FLOOR {
            worst = worst.max(diff / scale);
        }
    }
    worst
}
