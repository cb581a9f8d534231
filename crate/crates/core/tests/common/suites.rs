//! Criterion checks shared by the per-module suites and the acceptance run.
//! Each function panics on the first violation.

use std::collections::BTreeMap;
use std::sync::Arc;

use netlat::dataset::{generate_dataset, GeneratorConfig, PairCount};
use netlat::linegraph::{edge_weights as module_edge_weights, node_features, LineGraph};
use netlat::model::{
    dgcn_block, gat_head, init_dgcn_block, init_gat, init_nalu, nalu_cell, BranchWiring, DgcnAdjacencies,
    GatEdges, LatencyModel, ModelConfig, PreparedSnapshot, Readout,
};
use netlat::netmodel::{DirectedLink, NetworkSnapshot};
use netlat::oracle::{compute_link_loads, link_queues, little_check, DEFAULT_PACKET_SIZE};
use netlat::roles::{self, RoleAdjacency};
use netlat::tensor::{Graph, Matrix, ParamStore, SparseMatrix, SparseOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const FORMULA_SNAPSHOTS: u64 = 200;
const FORMULA_TOL: f64 = 1e-10;

fn formula_snapshot(seed: u64) {
    let s = random_snapshot(3, 6, seed);
    let lg = LineGraph::build(&s).unwrap();
    let index: BTreeMap<(usize, usize), usize> =
        lg.lnodes().iter().enumerate().map(|(i, l)| ((l.from, l.to), i)).collect();
    assert_eq!(index.keys().copied().collect::<Vec<_>>(), valid_links(&s).into_iter().collect::<Vec<_>>());

    let traffic = link_traffic(&s);
    for (&link, &i) in &index {
        let expected = traffic.get(&link).copied().unwrap_or(0.0) / capacity(&s, link);
        assert!((lg.features()[i][0] - expected).abs() <= FORMULA_TOL, "seed {seed} feature {link:?}");
    }
    let loads = compute_link_loads(&s).unwrap();
    let nf = node_features(&lg, &s, &loads);
    for (i, row) in nf.iter().enumerate() {
        assert_eq!(row, &lg.features()[i]);
    }

    let brute = edge_weights(&s);
    assert_eq!(brute.len(), lg.ledges().len(), "seed {seed}");
    let weights = module_edge_weights(&lg, &s, &loads);
    for (e, w) in lg.ledges().iter().zip(&weights) {
        let a = lg.project_back(e.src).unwrap();
        let b = lg.project_back(e.dst).unwrap();
        let expected = brute[&((a.from, a.to), (b.from, b.to))];
        assert!((e.weight - expected).abs() <= FORMULA_TOL, "seed {seed} weight");
        assert!((w - expected).abs() <= FORMULA_TOL);
    }

    let n = lg.lnode_count();
    let a = dense(
        n,
        brute
            .iter()
            .map(|(&(x, y), &w)| (index[&x], index[&y], w)),
    );
    let adj = DgcnAdjacencies::build(&lg);
    for (module, reference) in [
        (&adj.first, first_order(&a)),
        (&adj.second_in, second_in(&a)),
        (&adj.second_out, second_out(&a)),
    ] {
        let m = rows(&module.to_dense());
        assert!(max_abs_diff(&m, &reference) <= FORMULA_TOL, "seed {seed} adjacency");
        let norm = rows(&netlat::model::normalize(module).to_dense());
        assert!(max_abs_diff(&norm, &sym_normalize(&reference)) <= FORMULA_TOL, "seed {seed} normalized");
    }

    let (assignment, adjacency) = roles::extract(&lg, roles::DEFAULT_ROLES, seed);
    let expected = role_pairs(&assignment.role_of, lg.trajectories());
    assert_eq!(adjacency.pairs, expected.into_iter().collect::<Vec<_>>(), "seed {seed} role adjacency");
}

pub fn formula_oracles() {
    for seed in 0..FORMULA_SNAPSHOTS {
        formula_snapshot(seed);
    }
}

pub fn line_graph_structure() {
    for seed in 0..500u64 {
        let s = random_snapshot(3, 20, 10_000 + seed);
        let lg = LineGraph::build(&s).unwrap();
        let m = s.topology.link_count();
        assert!(lg.lnode_count() <= 2 * m);

        for (i, l) in lg.lnodes().iter().enumerate() {
            let back = lg.project_back(i).unwrap();
            assert_eq!(back, *l);
            assert_eq!(lg.lnode_of(back), Some(i));
        }
        assert!(lg.project_back(lg.lnode_count()).is_err());
        let valid = valid_links(&s);
        let lifted: std::collections::BTreeSet<_> = lg.lnodes().iter().map(|l| (l.from, l.to)).collect();
        assert_eq!(lifted, valid, "back projection is a bijection onto valid links");

        for e in lg.ledges() {
            let a = lg.project_back(e.src).unwrap();
            let b = lg.project_back(e.dst).unwrap();
            assert_eq!(a.to, b.from);
            assert_ne!(b, a.reversed(), "immediate reversal");
            assert!(e.weight.is_finite() && e.weight >= 0.0);
        }

        for (p, traj) in s.traffic.pairs.iter().zip(lg.trajectories()) {
            let hops = route(&s, p.src, p.dst);
            let lifted: Vec<usize> = hops
                .iter()
                .map(|&(u, v)| lg.lnode_of(DirectedLink::new(u, v)).unwrap())
                .collect();
            assert_eq!(&lifted, traj);
            for w in traj.windows(2) {
                assert!(lg.out_edges(w[0]).iter().any(|&e| lg.ledges()[e].dst == w[1]));
            }
        }
    }
}

pub fn continuing_fraction() {
    for seed in 0..200u64 {
        let s = random_snapshot(3, 12, 20_000 + seed);
        let lg = LineGraph::build(&s).unwrap();
        for v in 0..lg.lnode_count() {
            if lg.load(v) == 0.0 {
                continue;
            }
            let fraction: f64 = lg
                .out_edges(v)
                .iter()
                .map(|&e| {
                    let edge = &lg.ledges()[e];
                    edge.weight * lg.capacity(edge.dst) / lg.capacity(v)
                })
                .sum();
            assert!(fraction <= 1.0 + 1e-12, "seed {seed}: {fraction}");
            let head = lg.lnodes()[v].to;
            let terminates = s
                .traffic
                .pairs
                .iter()
                .zip(lg.trajectories())
                .any(|(p, t)| p.dst == head && t.contains(&v));
            if !terminates {
                assert!((fraction - 1.0).abs() < 1e-12, "seed {seed}: {fraction}");
            }
        }
    }
}

/// Little's law, path sums and flow conservation on one labelled snapshot.
fn queueing_snapshot(s: &NetworkSnapshot) {
    let perf = s.performance.as_ref().unwrap();
    let loads = compute_link_loads(s).unwrap();
    assert!(little_check(&loads, perf, DEFAULT_PACKET_SIZE) < 1e-12);

    let queues = link_queues(&loads, DEFAULT_PACKET_SIZE).unwrap();
    let delay: std::collections::BTreeMap<_, _> = queues.iter().map(|q| (q.link, q.delay)).collect();
    for (i, &latency) in perf.path_latency.iter().enumerate() {
        let sum: f64 = s.trajectory(i).unwrap().iter().map(|l| delay[l]).sum();
        assert_eq!(sum, latency);
    }

    let n = s.topology.node_count();
    let mut inflow = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    for l in &loads {
        outflow[l.link.from] += l.summed_traffic;
        inflow[l.link.to] += l.summed_traffic;
    }
    for p in &s.traffic.pairs {
        inflow[p.src] += p.mean;
        outflow[p.dst] += p.mean;
    }
    for v in 0..n {
        assert!((inflow[v] - outflow[v]).abs() <= 1e-9 * inflow[v].max(1.0), "node {v}");
    }
    for i in 0..s.traffic.len() {
        let t = s.trajectory(i).unwrap();
        for node in 0..n {
            let ins = t.iter().filter(|l| l.to == node).count();
            let outs = t.iter().filter(|l| l.from == node).count();
            let p = &s.traffic.pairs[i];
            let expected = (usize::from(node == p.dst), usize::from(node == p.src));
            if node == p.src || node == p.dst {
                assert_eq!((ins, outs), expected);
            } else {
                assert_eq!(ins, outs);
                assert!(ins <= 1);
            }
        }
    }
}

pub fn queueing_identities() {
    let configs = [
        GeneratorConfig::train_preset(),
        GeneratorConfig {
            n_min: 50,
            n_max: 80,
            ..GeneratorConfig::test_preset()
        },
        GeneratorConfig {
            n_min: 4,
            n_max: 12,
            mean_degree: 2.5,
            pairs: PairCount::Fixed(15),
            ..GeneratorConfig::default()
        },
    ];
    for (i, cfg) in configs.iter().enumerate() {
        for s in generate_dataset(cfg, 10, i as u64).unwrap() {
            queueing_snapshot(&s);
        }
    }
}

pub const EPS: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const GRADIENT_SEEDS: u64 = 20;

/// Uniform in `[-hi, -lo] ∪ [lo, hi]`, keeping entries away from zero.
fn away_from_zero(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn random_sparse(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(density) {
                t.push((i, j, rng.gen_range(0.1..2.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, t)
}

fn assert_ok(what: &str, seed: u64, err: f64) {
    assert!(err <= GRADIENT_TOL, "{what} seed {seed}: relative error {err:e}");
}

pub fn op_gradients() {
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("a", away_from_zero(4, 3, 0.2, 1.5, &mut rng), true);
        store.insert("b", away_from_zero(4, 3, 0.2, 1.5, &mut rng), true);
        store.insert("w", Matrix::uniform(3, 2, 1.0, &mut rng), true);
        store.insert("bias", Matrix::uniform(1, 3, 1.0, &mut rng), true);
        store.insert("k", Matrix::scalar(rng.gen_range(0.5..2.0)), true);
        store.insert("col", away_from_zero(4, 1, 0.2, 1.5, &mut rng), true);
        let sparse = SparseOp::new(random_sparse(4, 0.5, &mut rng));
        let index = Arc::new(vec![0usize, 2, 2, 3, 1, 0]);
        let segments = Arc::new(vec![0usize, 0, 1, 2]);

        type Op = Box<dyn Fn(&mut Graph, &ParamStore) -> netlat::tensor::Var>;
        let ops: Vec<(&str, Op)> = vec![
            ("matmul", Box::new(|g, s| {
                let (a, w) = (g.param(s, "a").unwrap(), g.param(s, "w").unwrap());
                g.matmul(a, w).unwrap()
            })),
            ("spmm", Box::new(move |g, s| {
                let a = g.param(s, "a").unwrap();
                g.spmm(&sparse, a).unwrap()
            })),
            ("add/sub/mul", Box::new(|g, s| {
                let (a, b) = (g.param(s, "a").unwrap(), g.param(s, "b").unwrap());
                let x = g.add(a, b).unwrap();
                let y = g.sub(x, b).unwrap();
                g.mul(y, b).unwrap()
            })),
            ("add_row/scale_by/row_scale", Box::new(|g, s| {
                let (a, bias, k, col) = (
                    g.param(s, "a").unwrap(),
                    g.param(s, "bias").unwrap(),
                    g.param(s, "k").unwrap(),
                    g.param(s, "col").unwrap(),
                );
                let x = g.add_row(a, bias).unwrap();
                let y = g.scale_by(x, k).unwrap();
                let z = g.row_scale(y, col).unwrap();
                let z = g.scale(z, 0.7);
                g.add_const(z, 0.3)
            })),
            ("concat/slice", Box::new(|g, s| {
                let (a, b) = (g.param(s, "a").unwrap(), g.param(s, "b").unwrap());
                let c = g.concat(&[a, b, a]).unwrap();
                g.slice_cols(c, 2, 7).unwrap()
            })),
            ("tanh/sigmoid/exp", Box::new(|g, s| {
                let a = g.param(s, "a").unwrap();
                let x = g.tanh(a);
                let y = g.sigmoid(x);
                g.exp(y)
            })),
            ("log_abs/abs", Box::new(|g, s| {
                let a = g.param(s, "a").unwrap();
                let x = g.log_abs(a);
                let b = g.param(s, "b").unwrap();
                let y = g.abs(b);
                g.mul(x, y).unwrap()
            })),
            ("leaky/softplus", Box::new(|g, s| {
                let a = g.param(s, "a").unwrap();
                let x = g.leaky_relu(a, 0.2);
                g.softplus(x)
            })),
            ("gather/segments", Box::new(move |g, s| {
                let a = g.param(s, "a").unwrap();
                let x = g.gather_rows(a, index.clone()).unwrap();
                let sum = g.segment_sum(a, segments.clone(), 3).unwrap();
                let mean = g.segment_mean(a, segments.clone(), 3).unwrap();
                let col = g.param(s, "col").unwrap();
                let soft = g.segment_softmax(col, segments.clone(), 3).unwrap();
                let soft = g.row_scale(a, soft).unwrap();
                let parts = g.concat(&[sum, mean]).unwrap();
                let m = g.mean(x);
                let t = g.sum(soft);
                let mt = g.add(m, t).unwrap();
                g.scale_by(parts, mt).unwrap()
            })),
            ("three-layer composition", Box::new(|g, s| {
                let (a, w, bias) = (g.param(s, "a").unwrap(), g.param(s, "w").unwrap(), g.param(s, "bias").unwrap());
                let h = g.add_row(a, bias).unwrap();
                let h = g.tanh(h);
                let h = g.matmul(h, w).unwrap();
                let h = g.leaky_relu(h, 0.2);
                let wt = g.param(s, "b").unwrap();
                let back = g.slice_cols(wt, 0, 2).unwrap();
                let h = g.mul(h, back).unwrap();
                g.sigmoid(h)
            })),
        ];
        for (name, op) in &ops {
            let err = gradient_error(&mut store, EPS, seed, |g, s| op(g, s));
            assert_ok(name, seed, err);
        }
    }
}

pub fn nalu_gradients() {
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        init_nalu(&mut store, "n", 3, 4, &mut rng);
        store.insert("x", away_from_zero(5, 3, 0.3, 2.0, &mut rng), true);
        let err = gradient_error(&mut store, EPS, seed, |g, s| {
            let x = g.param(s, "x").unwrap();
            nalu_cell(g, s, "n", x).unwrap()
        });
        assert_ok("nalu", seed, err);
    }
}

pub fn dgcn_gradients() {
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = 6;
        let adj = DgcnAdjacencies::from_weighted(&random_sparse(n, 0.35, &mut rng)).normalized();
        let mut store = ParamStore::new();
        init_dgcn_block(&mut store, "b", 4, 3, &mut rng);
        *store.value_mut("b.alpha").unwrap() = Matrix::scalar(rng.gen_range(0.5..1.5));
        *store.value_mut("b.beta").unwrap() = Matrix::scalar(rng.gen_range(0.5..1.5));
        store.insert("h", Matrix::uniform(n, 4, 1.0, &mut rng), true);
        let err = gradient_error(&mut store, EPS, seed, |g, s| {
            let h = g.param(s, "h").unwrap();
            dgcn_block(g, s, "b", h, &adj, 0.2).unwrap()
        });
        assert_ok("dgcn block", seed, err);
    }
}

pub fn gat_gradients() {
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = 7;
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.4) {
                    pairs.push((a, b));
                }
            }
        }
        let edges = GatEdges::from_role_adjacency(n, &RoleAdjacency { pairs });
        let mut store = ParamStore::new();
        init_gat(&mut store, "gat", 4, 1, 3, &mut rng);
        store.insert("h", Matrix::uniform(n, 4, 1.0, &mut rng), true);
        let err = gradient_error(&mut store, EPS, seed, |g, s| {
            let h = g.param(s, "h").unwrap();
            gat_head(g, s, "gat.0", h, &edges, 0.2).unwrap().output
        });
        assert_ok("gat head", seed, err);
    }
}

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        embed_dim: 5,
        dgcn_layers: 2,
        gat_heads: 2,
        gat_dim: 3,
        n_roles: 3,
        readout: if seed % 3 == 2 { Readout::Mlp } else { Readout::Nalu },
        wiring: if seed % 2 == 1 { BranchWiring::Sequential } else { BranchWiring::Parallel },
        ..ModelConfig::default()
    }
}

pub fn forward_gradients() {
    for seed in 0..GRADIENT_SEEDS {
        let snapshot = random_snapshot(4, 6, 400 + seed);
        let cfg = small_config(seed);
        let input = PreparedSnapshot::new(&snapshot, &cfg).unwrap();
        let mut model = LatencyModel::new(cfg, seed).unwrap();
        let err = gradient_error(&mut model.params, EPS, seed, |g, s| {
            let m = LatencyModel {
                config: small_config(seed),
                params: s.clone(),
            };
            let p = m.forward(g, &input, None).unwrap();
            g.scale(p.path_latency, 100.0)
        });
        assert_ok("forward latency", seed, err);
        let err = gradient_error(&mut model.params, EPS, seed, |g, s| {
            let m = LatencyModel {
                config: small_config(seed),
                params: s.clone(),
            };
            m.forward(g, &input, None).unwrap().occupancy
        });
        assert_ok("forward occupancy", seed, err);
    }
}
