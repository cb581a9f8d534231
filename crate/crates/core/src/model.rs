//! Line-graph latency model.
//!
//! Pipeline per snapshot:
//!
//! ```text
//! features -> embed -> [DGCN blocks (first-order, second-order in/out)]
//!                   -> [GAT over same-role co-trajectory pairs]
//!          -> concat -> readout -> (per-link delay, per-link occupancy)
//! ```
//!
//! Embedding and readout are NALU cells by default; an MLP variant exists for
//! ablations. Path latency is the sum of predicted link delays along each
//! trajectory.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linegraph::{LineGraph, LineGraphError, FEATURE_DIM};
use crate::netmodel::NetworkSnapshot;
use crate::roles::{self, RoleAdjacency, RoleAssignment};
use crate::tensor::{checkpoint_config_hash, Graph, Matrix, ParamStore, SparseMatrix, SparseOp, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    LineGraph(#[from] LineGraphError),
    #[error("checkpoint was written for config {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Nalu,
    Mlp,
}

/// How the DGCN and GAT branches are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchWiring {
    /// Both branches read the embedding; outputs are concatenated.
    Parallel,
    /// GAT reads the DGCN output.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub dgcn_layers: usize,
    pub gat_heads: usize,
    pub gat_dim: usize,
    pub n_roles: usize,
    pub edgedrop_p: f64,
    pub readout: Readout,
    pub leaky_slope: f64,
    pub wiring: BranchWiring,
    /// Seconds per unit of the delay channel.
    pub delay_unit: f64,
    /// Seed for the k-means role clustering.
    pub role_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            dgcn_layers: 3,
            gat_heads: 2,
            gat_dim: 16,
            n_roles: roles::DEFAULT_ROLES,
            edgedrop_p: 0.1,
            readout: Readout::Nalu,
            leaky_slope: 0.2,
            wiring: BranchWiring::Parallel,
            delay_unit: 0.01,
            role_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("dgcn_layers", self.dgcn_layers),
            ("gat_heads", self.gat_heads),
            ("gat_dim", self.gat_dim),
            ("n_roles", self.n_roles),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be >= 1")));
        }
        if !(0.0..1.0).contains(&self.edgedrop_p) {
            return Err(ModelError::Config(format!(
                "edgedrop_p must be in [0,1), got {}",
                self.edgedrop_p
            )));
        }
        if !(self.delay_unit > 0.0) {
            return Err(ModelError::Config("delay_unit must be > 0".into()));
        }
        Ok(())
    }

    /// Width of one DGCN branch; three branches concatenate to about `embed_dim`.
    pub fn branch_dim(&self) -> usize {
        self.embed_dim.div_ceil(3)
    }

    pub fn dgcn_out_dim(&self) -> usize {
        3 * self.branch_dim()
    }

    /// Hex digest binding checkpoints to this exact configuration.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

/// Symmetric proximity matrices of the weighted line graph, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct DgcnAdjacencies {
    pub first: SparseMatrix,
    pub second_in: SparseMatrix,
    pub second_out: SparseMatrix,
}

/// Degree-normalized `D^-1/2 (A + I) D^-1/2` operators.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacencies {
    pub first: SparseOp,
    pub second_in: SparseOp,
    pub second_out: SparseOp,
}

impl DgcnAdjacencies {
    /// From the weighted adjacency `a` (`a[s][d]` = weight of ledge `s -> d`):
    /// `first = (A + A^T) / 2`,
    /// `second_in[i][j] = sum_k A[k][i] A[k][j] / sum_v A[k][v]`,
    /// `second_out[i][j] = sum_k A[i][k] A[j][k] / sum_v A[v][k]`.
    /// Rows or columns of `A` summing to zero contribute nothing.
    pub fn from_weighted(a: &SparseMatrix) -> Self {
        let n = a.rows();
        let at = a.transpose();
        let mut first: Vec<(usize, usize, f64)> = a.iter().map(|(r, c, v)| (r, c, 0.5 * v)).collect();
        first.extend(at.iter().map(|(r, c, v)| (r, c, 0.5 * v)));

        let co_occurrence = |m: &SparseMatrix| {
            let mut out = Vec::new();
            for k in 0..m.rows() {
                let row: Vec<(usize, f64)> = m.row_entries(k).collect();
                let total: f64 = row.iter().map(|e| e.1).sum();
                if total == 0.0 {
                    continue;
                }
                for &(i, wi) in &row {
                    for &(j, wj) in &row {
                        out.push((i, j, wi * wj / total));
                    }
                }
            }
            SparseMatrix::from_triplets(m.rows(), m.rows(), out)
        };
        Self {
            first: SparseMatrix::from_triplets(n, n, first),
            // rows of A are out-neighborhoods, rows of A^T in-neighborhoods
            second_in: co_occurrence(a),
            second_out: co_occurrence(&at),
        }
    }

    /// Uses the line-graph edge weights as `A`.
    pub fn build(lg: &LineGraph) -> Self {
        let n = lg.lnode_count();
        let a = SparseMatrix::from_triplets(
            n,
            n,
            lg.ledges().iter().map(|e| (e.src, e.dst, e.weight)).collect(),
        );
        Self::from_weighted(&a)
    }

    /// Training mode drops each off-diagonal symmetric pair with probability
    /// `p`; inference mode returns an unchanged copy.
    pub fn edge_drop<R: Rng>(&self, p: f64, rng: &mut R, training: bool) -> Self {
        if !training || p == 0.0 {
            return self.clone();
        }
        let mut drop = |m: &SparseMatrix| {
            let mut kept = Vec::with_capacity(m.nnz());
            for (i, j, v) in m.iter() {
                if i == j {
                    kept.push((i, j, v));
                } else if i < j && rng.gen::<f64>() >= p {
                    kept.push((i, j, v));
                    kept.push((j, i, m.get(j, i)));
                }
            }
            SparseMatrix::from_triplets(m.rows(), m.cols(), kept)
        };
        Self {
            first: drop(&self.first),
            second_in: drop(&self.second_in),
            second_out: drop(&self.second_out),
        }
    }

    pub fn normalized(&self) -> NormalizedAdjacencies {
        NormalizedAdjacencies {
            first: SparseOp::symmetric(normalize(&self.first)),
            second_in: SparseOp::symmetric(normalize(&self.second_in)),
            second_out: SparseOp::symmetric(normalize(&self.second_out)),
        }
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the row sums of `A + I`.
pub fn normalize(a: &SparseMatrix) -> SparseMatrix {
    let with_loops = a.add_identity(1.0);
    let inv_sqrt: Vec<f64> = with_loops
        .row_sums()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    with_loops.scale(&inv_sqrt, &inv_sqrt)
}

/// Attention edges `source -> target`, sorted by target; includes self-loops.
#[derive(Debug, Clone)]
pub struct GatEdges {
    pub target: Arc<Vec<usize>>,
    pub source: Arc<Vec<usize>>,
    pub n: usize,
}

impl GatEdges {
    pub fn from_role_adjacency(n: usize, adjacency: &RoleAdjacency) -> Self {
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for &(a, b) in &adjacency.pairs {
            edges.push((a, b));
            edges.push((b, a));
        }
        edges.sort_unstable();
        edges.dedup();
        let (target, source) = edges.into_iter().unzip();
        Self {
            target: Arc::new(target),
            source: Arc::new(source),
            n,
        }
    }
}

/// Supervision extracted from a labelled snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub path_latency: Vec<f64>,
    /// Lnodes with positive ground-truth occupancy.
    pub occupancy_index: Arc<Vec<usize>>,
    pub occupancy: Vec<f64>,
}

/// Everything the model needs from one snapshot, computed once.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    pub node_count: usize,
    pub line_graph: LineGraph,
    pub roles: RoleAssignment,
    pub role_adjacency: RoleAdjacency,
    pub adjacencies: DgcnAdjacencies,
    pub normalized: NormalizedAdjacencies,
    pub features: Matrix,
    pub gat_edges: GatEdges,
    /// Pair-by-lnode incidence: row `p` marks the lnodes on pair `p`'s route.
    pub paths: SparseOp,
    pub targets: Option<Targets>,
}

/// Input width of the embedding: line-graph features plus a constant 1.
pub const INPUT_DIM: usize = FEATURE_DIM + 1;

impl PreparedSnapshot {
    pub fn new(snapshot: &NetworkSnapshot, config: &ModelConfig) -> Result<Self> {
        let line_graph = LineGraph::build(snapshot)?;
        Ok(Self::from_line_graph(snapshot, line_graph, config))
    }

    pub fn from_line_graph(snapshot: &NetworkSnapshot, line_graph: LineGraph, config: &ModelConfig) -> Self {
        let (roles, role_adjacency) = roles::extract(&line_graph, config.n_roles, config.role_seed);
        Self::assemble(snapshot, line_graph, roles, role_adjacency)
    }

    /// Builds the model inputs from precomputed structures.
    pub fn assemble(
        snapshot: &NetworkSnapshot,
        line_graph: LineGraph,
        roles: RoleAssignment,
        role_adjacency: RoleAdjacency,
    ) -> Self {
        let n = line_graph.lnode_count();
        let adjacencies = DgcnAdjacencies::build(&line_graph);
        let normalized = adjacencies.normalized();
        let features = Matrix::from_rows(
            &line_graph
                .features()
                .iter()
                .map(|f| {
                    let mut row = f.to_vec();
                    row.push(1.0);
                    row
                })
                .collect::<Vec<_>>(),
        );
        let gat_edges = GatEdges::from_role_adjacency(n, &role_adjacency);
        let paths = SparseOp::new(path_incidence(line_graph.trajectories(), n));
        let targets = snapshot.performance.as_ref().map(|perf| {
            let mut index = Vec::new();
            let mut occupancy = Vec::new();
            for (link, occ) in &perf.link_occupancy {
                if *occ > 0.0 {
                    if let Some(i) = line_graph.lnode_of(*link) {
                        index.push(i);
                        occupancy.push(*occ);
                    }
                }
            }
            Targets {
                path_latency: perf.path_latency.clone(),
                occupancy_index: Arc::new(index),
                occupancy,
            }
        });
        Self {
            node_count: snapshot.topology.node_count(),
            line_graph,
            roles,
            role_adjacency,
            adjacencies,
            normalized,
            features,
            gat_edges,
            paths,
            targets,
        }
    }

    pub fn lnode_count(&self) -> usize {
        self.line_graph.lnode_count()
    }

    pub fn pair_count(&self) -> usize {
        self.line_graph.trajectories().len()
    }
}

fn path_incidence(trajectories: &[Vec<usize>], n: usize) -> SparseMatrix {
    let triplets = trajectories
        .iter()
        .enumerate()
        .flat_map(|(p, t)| t.iter().map(move |&v| (p, v, 1.0)))
        .collect();
    SparseMatrix::from_triplets(trajectories.len(), n, triplets)
}

/// Sum of per-lnode delays along each trajectory.
pub fn predict_path_latency(delays: &[f64], trajectories: &[Vec<usize>]) -> Vec<f64> {
    trajectories
        .iter()
        .map(|t| t.iter().map(|&v| delays[v]).sum())
        .collect()
}

fn xavier(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

/// Registers the `W_hat`, `M_hat` and gate `G` matrices of a NALU cell.
pub fn init_nalu<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) {
    let b = xavier(d_in, d_out);
    store.insert(&format!("{prefix}.w_hat"), Matrix::uniform(d_in, d_out, b, rng), true);
    store.insert(&format!("{prefix}.m_hat"), Matrix::uniform(d_in, d_out, b, rng), true);
    store.insert(&format!("{prefix}.gate"), Matrix::uniform(d_in, d_out, b, rng), true);
}

/// NALU cell on a batch of row vectors:
/// `W = tanh(W_hat) * sigmoid(M_hat)`, `a = x W`,
/// `m = exp(ln(|x| + eps) W)`, `g = sigmoid(x G)`, `y = g a + (1 - g) m`.
pub fn nalu_cell(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w_hat = g.param(store, &format!("{prefix}.w_hat"))?;
    let m_hat = g.param(store, &format!("{prefix}.m_hat"))?;
    let gate = g.param(store, &format!("{prefix}.gate"))?;
    let t = g.tanh(w_hat);
    let s = g.sigmoid(m_hat);
    let w = g.mul(t, s)?;
    let additive = g.matmul(x, w)?;
    let log_x = g.log_abs(x);
    let log_m = g.matmul(log_x, w)?;
    let multiplicative = g.exp(log_m);
    let logits = g.matmul(x, gate)?;
    let gt = g.sigmoid(logits);
    let diff = g.sub(additive, multiplicative)?;
    let gated = g.mul(gt, diff)?;
    Ok(g.add(multiplicative, gated)?)
}

pub fn init_linear<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) {
    store.insert(&format!("{prefix}.w"), Matrix::uniform(d_in, d_out, xavier(d_in, d_out), rng), true);
    store.insert(&format!("{prefix}.b"), Matrix::zeros(1, d_out), true);
}

pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    Ok(g.add_row(xw, b)?)
}

pub fn init_dgcn_block<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, branch: usize, rng: &mut R) {
    let b = xavier(d_in, branch);
    for name in ["theta_first", "theta_in", "theta_out"] {
        store.insert(&format!("{prefix}.{name}"), Matrix::uniform(d_in, branch, b, rng), true);
    }
    store.insert(&format!("{prefix}.alpha"), Matrix::scalar(1.0), true);
    store.insert(&format!("{prefix}.beta"), Matrix::scalar(1.0), true);
    store.insert(
        &format!("{prefix}.skip"),
        Matrix::uniform(d_in, 3 * branch, xavier(d_in, 3 * branch), rng),
        true,
    );
}

/// The three propagated branches, concatenated, before skip and activation:
/// `[f_first(H) | alpha f_in(H) | beta f_out(H)]` with `f_x(H) = S_x H Theta_x`.
pub fn dgcn_branches(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    adj: &NormalizedAdjacencies,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(3);
    for (name, op, scale) in [
        ("theta_first", &adj.first, None),
        ("theta_in", &adj.second_in, Some("alpha")),
        ("theta_out", &adj.second_out, Some("beta")),
    ] {
        let theta = g.param(store, &format!("{prefix}.{name}"))?;
        let projected = g.matmul(h, theta)?;
        let mut f = g.spmm(op, projected)?;
        if let Some(s) = scale {
            let k = g.param(store, &format!("{prefix}.{s}"))?;
            f = g.scale_by(f, k)?;
        }
        parts.push(f);
    }
    Ok(g.concat(&parts)?)
}

/// One DGCN block: branches plus a projected skip connection, then leaky-relu.
pub fn dgcn_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    adj: &NormalizedAdjacencies,
    slope: f64,
) -> Result<Var> {
    let branches = dgcn_branches(g, store, prefix, h, adj)?;
    let w_skip = g.param(store, &format!("{prefix}.skip"))?;
    let skip = g.matmul(h, w_skip)?;
    let sum = g.add(branches, skip)?;
    Ok(g.leaky_relu(sum, slope))
}

pub fn init_gat<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, heads: usize, d_head: usize, rng: &mut R) {
    for h in 0..heads {
        store.insert(&format!("{prefix}.{h}.w"), Matrix::uniform(d_in, d_head, xavier(d_in, d_head), rng), true);
        let b = xavier(2 * d_head, 1);
        store.insert(&format!("{prefix}.{h}.a_target"), Matrix::uniform(d_head, 1, b, rng), true);
        store.insert(&format!("{prefix}.{h}.a_source"), Matrix::uniform(d_head, 1, b, rng), true);
    }
}

/// Attention weights and output of one GAT head.
pub struct GatHead {
    pub attention: Var,
    pub output: Var,
}

/// One attention head: `e_ij = leaky(a^T [W h_i | W h_j])` over the edges
/// `j -> i`, softmax-normalized per target `i`, output `sum_j att_ij W h_j`.
pub fn gat_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    edges: &GatEdges,
    slope: f64,
) -> Result<GatHead> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let a_t = g.param(store, &format!("{prefix}.a_target"))?;
    let a_s = g.param(store, &format!("{prefix}.a_source"))?;
    let wh = g.matmul(h, w)?;
    let score_t = g.matmul(wh, a_t)?;
    let score_s = g.matmul(wh, a_s)?;
    let et = g.gather_rows(score_t, edges.target.clone())?;
    let es = g.gather_rows(score_s, edges.source.clone())?;
    let e = g.add(et, es)?;
    let e = g.leaky_relu(e, slope);
    let attention = g.segment_softmax(e, edges.target.clone(), edges.n)?;
    let messages = g.gather_rows(wh, edges.source.clone())?;
    let weighted = g.row_scale(messages, attention)?;
    let output = g.segment_sum(weighted, edges.target.clone(), edges.n)?;
    Ok(GatHead { attention, output })
}

/// Multi-head GAT layer; head outputs are concatenated.
pub fn gat_layer(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    edges: &GatEdges,
    heads: usize,
    slope: f64,
) -> Result<Var> {
    let outs = (0..heads)
        .map(|k| gat_head(g, store, &format!("{prefix}.{k}"), h, edges, slope).map(|o| o.output))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.concat(&outs)?)
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    /// Per-lnode delay in seconds.
    pub delay: Var,
    pub occupancy: Var,
    /// Per-OD-pair latency in seconds.
    pub path_latency: Var,
}

/// Plain values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionValues {
    pub delay: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub path_latency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl LatencyModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.embed_dim;
        match config.readout {
            Readout::Nalu => init_nalu(&mut params, "embed", INPUT_DIM, d, &mut rng),
            Readout::Mlp => init_linear(&mut params, "embed", INPUT_DIM, d, &mut rng),
        }
        let mut width = d;
        for l in 0..config.dgcn_layers {
            init_dgcn_block(&mut params, &format!("dgcn.{l}"), width, config.branch_dim(), &mut rng);
            width = config.dgcn_out_dim();
        }
        let gat_in = match config.wiring {
            BranchWiring::Parallel => d,
            BranchWiring::Sequential => width,
        };
        init_gat(&mut params, "gat", gat_in, config.gat_heads, config.gat_dim, &mut rng);
        let gat_out = config.gat_heads * config.gat_dim;
        let readout_in = match config.wiring {
            BranchWiring::Parallel => width + gat_out,
            BranchWiring::Sequential => gat_out,
        };
        match config.readout {
            Readout::Nalu => init_nalu(&mut params, "readout", readout_in, 2, &mut rng),
            Readout::Mlp => {
                init_linear(&mut params, "readout.hidden", readout_in, d, &mut rng);
                init_linear(&mut params, "readout.out", d, 2, &mut rng);
            }
        }
        Ok(Self { config, params })
    }

    /// Records one forward pass. Passing an RNG selects training mode, which
    /// applies edge dropping to the DGCN adjacencies.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &PreparedSnapshot,
        training_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Prediction> {
        let cfg = &self.config;
        let store = &self.params;
        let slope = cfg.leaky_slope;
        let x = g.constant(input.features.clone());
        let h0 = match cfg.readout {
            Readout::Nalu => nalu_cell(g, store, "embed", x)?,
            Readout::Mlp => {
                let z = linear(g, store, "embed", x)?;
                g.leaky_relu(z, slope)
            }
        };

        let dropped;
        let adj = match training_rng {
            Some(rng) if cfg.edgedrop_p > 0.0 => {
                dropped = input.adjacencies.edge_drop(cfg.edgedrop_p, rng, true).normalized();
                &dropped
            }
            _ => &input.normalized,
        };
        let mut h = h0;
        for l in 0..cfg.dgcn_layers {
            h = dgcn_block(g, store, &format!("dgcn.{l}"), h, adj, slope)?;
        }
        let z = match cfg.wiring {
            BranchWiring::Parallel => {
                let att = gat_layer(g, store, "gat", h0, &input.gat_edges, cfg.gat_heads, slope)?;
                g.concat(&[h, att])?
            }
            BranchWiring::Sequential => {
                gat_layer(g, store, "gat", h, &input.gat_edges, cfg.gat_heads, slope)?
            }
        };
        let out = match cfg.readout {
            Readout::Nalu => nalu_cell(g, store, "readout", z)?,
            Readout::Mlp => {
                let hidden = linear(g, store, "readout.hidden", z)?;
                let hidden = g.leaky_relu(hidden, slope);
                linear(g, store, "readout.out", hidden)?
            }
        };
        let raw_delay = g.slice_cols(out, 0, 1)?;
        let occupancy = g.slice_cols(out, 1, 2)?;
        let positive = g.softplus(raw_delay);
        let delay = g.scale(positive, cfg.delay_unit);
        let path_latency = g.spmm(&input.paths, delay)?;
        Ok(Prediction {
            delay,
            occupancy,
            path_latency,
        })
    }

    /// Inference-mode forward pass returning plain values.
    pub fn predict(&self, input: &PreparedSnapshot) -> Result<PredictionValues> {
        let mut g = Graph::new();
        let p = self.forward(&mut g, input, None)?;
        Ok(PredictionValues {
            delay: g.value(p.delay).data().to_vec(),
            occupancy: g.value(p.occupancy).data().to_vec(),
            path_latency: g.value(p.path_latency).data().to_vec(),
        })
    }

    pub fn config_hash(&self) -> String {
        self.config.config_hash()
    }

    pub fn to_checkpoint(&self) -> String {
        self.params.to_checkpoint(&self.config_hash())
    }

    /// Restores parameters; the checkpoint must carry this config's hash.
    pub fn from_checkpoint(config: ModelConfig, text: &str) -> Result<Self> {
        let expected = config.config_hash();
        let found = checkpoint_config_hash(text)?;
        if found != expected {
            return Err(ModelError::ConfigHashMismatch { expected, found });
        }
        let mut model = Self::new(config, 0)?;
        model.params.load_checkpoint(text)?;
        Ok(model)
    }
}
