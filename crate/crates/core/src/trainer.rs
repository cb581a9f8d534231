//! Training loop, MAPE loss, size-bucketed evaluation and readout ablation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LatencyModel, ModelConfig, ModelError, PreparedSnapshot, Readout};
use crate::tensor::{AdamConfig, Graph, Matrix, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("truth entry {index} is zero")]
    ZeroTruth { index: usize },
    #[error("length mismatch: {predicted} predictions for {truth} targets")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("snapshot {0} has no ground truth")]
    Unlabelled(usize),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Mean absolute percentage error, in percent.
pub fn mape(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(TrainError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if let Some(index) = truth.iter().position(|&t| t == 0.0) {
        return Err(TrainError::ZeroTruth { index });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| ((p - t) / t).abs())
        .sum();
    Ok(100.0 * total / truth.len() as f64)
}

/// Differentiable MAPE of a column `predicted` against fixed `truth`.
pub fn mape_var(g: &mut Graph, predicted: Var, truth: &[f64]) -> Result<Var> {
    if let Some(index) = truth.iter().position(|&t| t == 0.0) {
        return Err(TrainError::ZeroTruth { index });
    }
    let t = g.constant(Matrix::column(truth.to_vec()));
    let inv = g.constant(Matrix::column(truth.iter().map(|t| 1.0 / t.abs()).collect()));
    let diff = g.sub(predicted, t)?;
    let abs = g.abs(diff);
    let rel = g.mul(abs, inv)?;
    let mean = g.mean(rel);
    Ok(g.scale(mean, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub path: f64,
    pub link: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { path: 1.0, link: 0.5 }
    }
}

/// `path * MAPE(path latency) + link * MAPE(occupancy on busy links)`.
pub fn loss(
    g: &mut Graph,
    prediction: &crate::model::Prediction,
    input: &PreparedSnapshot,
    weights: LossWeights,
) -> Result<Var> {
    let targets = input.targets.as_ref().ok_or(TrainError::Unlabelled(0))?;
    let path = mape_var(g, prediction.path_latency, &targets.path_latency)?;
    let mut total = g.scale(path, weights.path);
    if weights.link != 0.0 && !targets.occupancy.is_empty() {
        let occ = g.gather_rows(prediction.occupancy, targets.occupancy_index.clone())?;
        let link = mape_var(g, occ, &targets.occupancy)?;
        let link = g.scale(link, weights.link);
        total = g.add(total, link)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub seeds: Vec<u64>,
    pub loss_weights: LossWeights,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            samples_per_epoch: 400,
            seeds: vec![0, 1, 2],
            loss_weights: LossWeights::default(),
            patience: None,
            clip_norm: Some(10.0),
        }
    }

    pub fn full() -> Self {
        Self {
            epochs: 250,
            samples_per_epoch: 4000,
            seeds: vec![0, 1, 2, 3, 4],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be > 0".into()));
        }
        if self.epochs == 0 || self.samples_per_epoch == 0 {
            return Err(TrainError::Config("epochs and samples_per_epoch must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mape: f64,
    pub validation_mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub step: usize,
}

/// One seed's training run; `model` holds the best-validation parameters.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: LatencyModel,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub diverged: Option<Divergence>,
}

impl SeedRun {
    pub fn stop_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }
}

fn require_labels(data: &[PreparedSnapshot]) -> Result<()> {
    match data.iter().position(|s| s.targets.is_none()) {
        Some(i) => Err(TrainError::Unlabelled(i)),
        None => Ok(()),
    }
}

/// Trains one model per seed; seeds run in parallel.
pub fn train(
    train_set: &[PreparedSnapshot],
    validation: &[PreparedSnapshot],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<SeedRun>> {
    config.validate()?;
    model_config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    require_labels(train_set)?;
    require_labels(validation)?;
    config
        .seeds
        .par_iter()
        .map(|&seed| train_seed(train_set, validation, model_config, config, seed))
        .collect()
}

/// Mean per-snapshot path MAPE of a frozen model.
pub fn dataset_mape(model: &LatencyModel, data: &[PreparedSnapshot]) -> Result<f64> {
    let scores = data
        .par_iter()
        .map(|s| {
            let p = model.predict(s)?;
            let t = s.targets.as_ref().expect("labelled");
            mape(&p.path_latency, &t.path_latency)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

pub fn train_seed(
    train_set: &[PreparedSnapshot],
    validation: &[PreparedSnapshot],
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<SeedRun> {
    let mut model = LatencyModel::new(model_config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A4D_1E00_0000);
    let adam = config.adam();
    let mut order: Vec<usize> = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LatencyModel)> = None;
    let mut stopped_early = false;
    let mut diverged = None;

    'epochs: for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for step in 0..config.samples_per_epoch {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
            }
            let input = &train_set[order.pop().expect("refilled")];
            let mut g = Graph::new();
            let prediction = model.forward(&mut g, input, Some(&mut rng))?;
            let l = loss(&mut g, &prediction, input, config.loss_weights)?;
            let value = g.value(l).item();
            model.params.zero_grad();
            g.backward(l, &mut model.params)?;
            if !value.is_finite() || !model.params.grads_finite() {
                diverged = Some(Divergence { epoch, step });
                break 'epochs;
            }
            model.params.adam_step(&adam);
            let targets = input.targets.as_ref().expect("labelled");
            total += mape(g.value(prediction.path_latency).data(), &targets.path_latency)?;
        }
        let train_mape = total / config.samples_per_epoch as f64;
        let validation_mape = if validation.is_empty() {
            None
        } else {
            Some(dataset_mape(&model, validation)?)
        };
        epochs.push(EpochStats {
            epoch,
            train_mape,
            validation_mape,
        });
        let score = validation_mape.unwrap_or(train_mape);
        if !score.is_finite() {
            diverged = Some(Divergence {
                epoch,
                step: config.samples_per_epoch,
            });
            break;
        }
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        } else if let Some(patience) = config.patience {
            let since = epoch - best.as_ref().map_or(0, |b| b.1);
            if since >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(SeedRun {
        seed,
        model,
        epochs,
        best_epoch,
        stopped_early,
        diverged,
    })
}

/// Anything that maps a prepared snapshot to per-pair latencies.
pub trait LatencyPredictor: Sync {
    fn predict_paths(&self, input: &PreparedSnapshot) -> Result<Vec<f64>>;
}

impl LatencyPredictor for LatencyModel {
    fn predict_paths(&self, input: &PreparedSnapshot) -> Result<Vec<f64>> {
        Ok(self.predict(input)?.path_latency)
    }
}

/// Predicts the same latency for every pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantBaseline {
    pub latency: f64,
}

impl ConstantBaseline {
    /// Mean path latency over all pairs of `data`.
    pub fn fit(data: &[PreparedSnapshot]) -> Self {
        let (sum, count) = data
            .iter()
            .filter_map(|s| s.targets.as_ref())
            .flat_map(|t| t.path_latency.iter())
            .fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
        Self {
            latency: if count == 0 { 0.0 } else { sum / count as f64 },
        }
    }
}

impl LatencyPredictor for ConstantBaseline {
    fn predict_paths(&self, input: &PreparedSnapshot) -> Result<Vec<f64>> {
        Ok(vec![self.latency; input.pair_count()])
    }
}

/// Node-count interval `[lo, hi)`; the last bucket of a partition also holds `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub lo: usize,
    pub hi: usize,
    pub closed: bool,
}

impl SizeBucket {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && (n < self.hi || (self.closed && n == self.hi))
    }
}

/// Equal-width buckets partitioning `[lo, hi]`.
pub fn size_buckets(lo: usize, hi: usize, width: usize) -> Vec<SizeBucket> {
    assert!(width > 0 && lo < hi, "empty bucket range");
    let mut out = Vec::new();
    let mut start = lo;
    while start < hi {
        let end = (start + width).min(hi);
        out.push(SizeBucket {
            lo: start,
            hi: end,
            closed: end == hi,
        });
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotScore {
    pub node_count: usize,
    pub lnode_count: usize,
    pub mape: f64,
    pub infer_ms: Option<f64>,
}

/// `None` fields mean the bucket held no snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: SizeBucket,
    pub count: usize,
    pub mape_mean: Option<f64>,
    pub mape_std: Option<f64>,
    pub infer_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub snapshots: Vec<SnapshotScore>,
    pub buckets: Vec<BucketScore>,
}

impl Evaluation {
    pub fn mape(&self) -> f64 {
        mean(&self.snapshots.iter().map(|s| s.mape).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    }

    pub fn bucket(&self, lo: usize) -> Option<&BucketScore> {
        self.buckets.iter().find(|b| b.bucket.lo == lo)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
}

/// Sample variance; `None` below two values.
pub fn variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Scores `predictor` per snapshot and aggregates by size bucket. With
/// `timed`, snapshots run sequentially and the wall clock around each
/// prediction is recorded; otherwise they run in parallel.
pub fn evaluate<P: LatencyPredictor>(
    predictor: &P,
    data: &[PreparedSnapshot],
    buckets: &[SizeBucket],
    timed: bool,
) -> Result<Evaluation> {
    require_labels(data)?;
    let score = |s: &PreparedSnapshot| -> Result<SnapshotScore> {
        let start = Instant::now();
        let predicted = predictor.predict_paths(s)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let truth = &s.targets.as_ref().expect("labelled").path_latency;
        Ok(SnapshotScore {
            node_count: s.node_count,
            lnode_count: s.lnode_count(),
            mape: mape(&predicted, truth)?,
            infer_ms: timed.then_some(elapsed),
        })
    };
    let snapshots = if timed {
        data.iter().map(score).collect::<Result<Vec<_>>>()?
    } else {
        data.par_iter().map(score).collect::<Result<Vec<_>>>()?
    };
    let buckets = buckets
        .iter()
        .map(|&bucket| {
            let inside: Vec<&SnapshotScore> = snapshots.iter().filter(|s| bucket.contains(s.node_count)).collect();
            let mapes: Vec<f64> = inside.iter().map(|s| s.mape).collect();
            let times: Vec<f64> = inside.iter().filter_map(|s| s.infer_ms).collect();
            BucketScore {
                bucket,
                count: inside.len(),
                mape_mean: mean(&mapes),
                mape_std: std_dev(&mapes),
                infer_ms_mean: mean(&times),
            }
        })
        .collect();
    Ok(Evaluation { snapshots, buckets })
}

/// Per-bucket aggregate across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: SizeBucket,
    pub mape_mean: Option<f64>,
    /// Standard deviation across seeds; `None` with a single seed.
    pub mape_std: Option<f64>,
    pub infer_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub diverged: Option<Divergence>,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub name: String,
    pub model: ModelConfig,
    pub seeds: Vec<SeedReport>,
    pub buckets: Vec<BucketSummary>,
    /// Mean test MAPE per seed.
    pub seed_mape: Vec<f64>,
    pub mape_mean: Option<f64>,
    /// Across-seed sample variance; `None` (n/a) with fewer than two seeds.
    pub mape_variance: Option<f64>,
}

impl ConfigReport {
    pub fn from_runs(name: &str, model: &ModelConfig, runs: &[SeedRun], evaluations: Vec<Option<Evaluation>>) -> Self {
        let seeds: Vec<SeedReport> = runs
            .iter()
            .zip(evaluations)
            .map(|(r, evaluation)| SeedReport {
                seed: r.seed,
                epochs: r.epochs.clone(),
                best_epoch: r.best_epoch,
                stopped_early: r.stopped_early,
                diverged: r.diverged.clone(),
                evaluation,
            })
            .collect();
        let evals: Vec<&Evaluation> = seeds.iter().filter_map(|s| s.evaluation.as_ref()).collect();
        let seed_mape: Vec<f64> = evals.iter().map(|e| e.mape()).collect();
        let buckets = evals
            .first()
            .map(|e| {
                (0..e.buckets.len())
                    .map(|i| {
                        let per_seed: Vec<f64> = evals.iter().filter_map(|e| e.buckets[i].mape_mean).collect();
                        let times: Vec<f64> = evals.iter().filter_map(|e| e.buckets[i].infer_ms_mean).collect();
                        BucketSummary {
                            bucket: e.buckets[i].bucket,
                            mape_mean: mean(&per_seed),
                            mape_std: if per_seed.len() < 2 { None } else { std_dev(&per_seed) },
                            infer_ms_mean: mean(&times),
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            name: name.to_string(),
            model: model.clone(),
            seeds,
            buckets,
            mape_mean: mean(&seed_mape),
            mape_variance: variance(&seed_mape),
            seed_mape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train: TrainConfig,
    pub configs: Vec<ConfigReport>,
    pub baseline: Option<Evaluation>,
}

pub const CSV_HEADER: &str = "config,seed,bucket_lo,bucket_hi,mape_mean,mape_std,infer_ms_mean";

fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per bucket per config per seed, plus a `mean` row per bucket
    /// whose std is taken across seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut row = |config: &str, seed: &str, b: &SizeBucket, m: Option<f64>, s: Option<f64>, t: Option<f64>| {
            out.push_str(&format!(
                "{config},{seed},{},{},{},{},{}\n",
                b.lo,
                b.hi,
                cell(m),
                cell(s),
                cell(t)
            ));
        };
        for c in &self.configs {
            for s in &c.seeds {
                if let Some(e) = &s.evaluation {
                    for b in &e.buckets {
                        row(&c.name, &s.seed.to_string(), &b.bucket, b.mape_mean, b.mape_std, b.infer_ms_mean);
                    }
                }
            }
            for b in &c.buckets {
                row(&c.name, "mean", &b.bucket, b.mape_mean, b.mape_std, b.infer_ms_mean);
            }
        }
        if let Some(e) = &self.baseline {
            for b in &e.buckets {
                row("constant", "-", &b.bucket, b.mape_mean, b.mape_std, b.infer_ms_mean);
            }
        }
        out
    }
}

/// Trains and evaluates one config per readout; all other fields are shared.
pub fn ablate(
    train_set: &[PreparedSnapshot],
    validation: &[PreparedSnapshot],
    test: &[PreparedSnapshot],
    base: &ModelConfig,
    readouts: &[Readout],
    config: &TrainConfig,
    buckets: &[SizeBucket],
) -> Result<Vec<ConfigReport>> {
    readouts
        .iter()
        .map(|&readout| {
            let model = ModelConfig {
                readout,
                ..base.clone()
            };
            let runs = train(train_set, validation, &model, config)?;
            let evals = runs
                .iter()
                .map(|r| evaluate(&r.model, test, buckets, false).map(Some))
                .collect::<Result<Vec<_>>>()?;
            Ok(ConfigReport::from_runs(readout_name(readout), &model, &runs, evals))
        })
        .collect()
}

pub fn readout_name(readout: Readout) -> &'static str {
    match readout {
        Readout::Nalu => "nalu",
        Readout::Mlp => "mlp",
    }
}
