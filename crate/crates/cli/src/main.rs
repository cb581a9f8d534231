mod manifest;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use netlat::dataset::{generate_dataset, GeneratorConfig, PairCount};
use netlat::linegraph::LineGraph;
use netlat::model::{LatencyModel, ModelConfig, ModelError, PreparedSnapshot, Readout};
use netlat::netmodel::{load_dataset, save_dataset, NetError, NetworkSnapshot};
use netlat::oracle::OracleError;
use netlat::roles;
use netlat::tensor::TensorError;
use netlat::trainer::{
    self, size_buckets, ConfigReport, ConstantBaseline, Evaluation, SizeBucket, TrainConfig, TrainError, TrainReport,
};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "netlat", version, about = "Per-path latency prediction on line graphs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Base seed.
    #[arg(long, global = true, env = "NETLAT_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled JSON Lines dataset.
    Gen(GenArgs),
    /// Build line graphs and roles for each snapshot.
    Transform(TransformArgs),
    /// Train one model per seed and write checkpoints plus a report.
    Train(TrainArgs),
    /// Predict per-pair latencies with a checkpoint.
    Predict(PredictArgs),
    /// Score a checkpoint per size bucket.
    Evaluate(EvaluateArgs),
    /// Compare NALU and MLP embedding/readout.
    Ablate(AblateArgs),
    /// Render a report as CSV and SVG.
    Report(ReportArgs),
    /// Check that the files recorded in a manifest are unchanged.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SizePreset {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainPreset {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    Nalu,
    Mlp,
}

impl From<ReadoutArg> for Readout {
    fn from(r: ReadoutArg) -> Self {
        match r {
            ReadoutArg::Nalu => Readout::Nalu,
            ReadoutArg::Mlp => Readout::Mlp,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "train")]
    preset: SizePreset,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    degree: Option<f64>,
    /// OD pairs per snapshot (default: every ordered pair).
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = roles::DEFAULT_ROLES)]
    n_roles: usize,
    /// Write full line graphs instead of summaries.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON model config; flags below override its fields.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    readout: Option<ReadoutArg>,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long, value_enum, default_value = "desk")]
    train_preset: TrainPreset,
    /// JSON train config; replaces the preset.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    /// Explicit seeds (default: consecutive from --seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training snapshots.
    #[arg(long)]
    train: PathBuf,
    /// Larger snapshots: the first 10% validate, the rest are the test set.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    bucket_width: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `model_config.json` next to the checkpoint.
    #[arg(long)]
    model_config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    checkpoint: CheckpointArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    checkpoint: CheckpointArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    bucket_width: usize,
    /// Skip the sequential timed pass and score snapshots in parallel.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    #[arg(long, default_value_t = 25)]
    bucket_width: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.json` written by `train` or `ablate`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    manifest: PathBuf,
}

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Input = 2,
    Mismatch = 3,
    Divergence = 4,
}

#[derive(Debug)]
struct Diverged(String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training diverged: {}", self.0)
    }
}

impl std::error::Error for Diverged {}

fn is_mismatch(e: &ModelError) -> bool {
    matches!(
        e,
        ModelError::ConfigHashMismatch { .. } | ModelError::Tensor(TensorError::Checkpoint(_) | TensorError::UnknownParam(_))
    )
}

fn classify(err: &anyhow::Error) -> Failure {
    for cause in err.chain() {
        if cause.is::<Diverged>() {
            return Failure::Divergence;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            if is_mismatch(e) {
                return Failure::Mismatch;
            }
        }
        if let Some(TrainError::Model(e)) = cause.downcast_ref::<TrainError>() {
            if is_mismatch(e) {
                return Failure::Mismatch;
            }
        }
    }
    Failure::Input
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(Failure::Input as u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Transform(a) => transform(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a, seed),
        Command::Report(a) => report(a),
        Command::Verify(a) => verify(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn read_dataset(path: &Path) -> Result<Vec<NetworkSnapshot>> {
    load_dataset(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn prepare(data: &[NetworkSnapshot], config: &ModelConfig) -> Result<Vec<PreparedSnapshot>> {
    data.par_iter()
        .map(|s| PreparedSnapshot::new(s, config).map_err(Into::into))
        .collect()
}

fn gen(a: GenArgs, seed: u64) -> Result<()> {
    let mut cfg = match a.preset {
        SizePreset::Train => GeneratorConfig::train_preset(),
        SizePreset::Test => GeneratorConfig::test_preset(),
    };
    if let Some(n) = a.n_min {
        cfg.n_min = n;
        cfg.n_max = cfg.n_max.max(n);
    }
    if let Some(n) = a.n_max {
        cfg.n_max = n;
        cfg.n_min = cfg.n_min.min(n);
    }
    match a.degree {
        Some(d) => cfg.mean_degree = d,
        None => cfg.mean_degree = cfg.mean_degree.min(cfg.n_min.saturating_sub(1) as f64),
    }
    if let Some(k) = a.pairs {
        cfg.pairs = PairCount::Fixed(k);
    }
    let data = generate_dataset(&cfg, a.count, seed).map_err(|e| match e {
        OracleError::Net(NetError::InvalidParameter(msg)) => anyhow::anyhow!("infeasible generator settings: {msg}"),
        other => other.into(),
    })?;
    write_text(&a.out, &save_dataset(&data))?;
    let mut m = RunManifest::new("gen");
    m.seeds.push(seed);
    m.output(&a.out)?;
    m.write(&manifest::beside(&a.out))?;
    eprintln!("wrote {} snapshots to {}", data.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TransformSummary {
    index: usize,
    nodes: usize,
    lnodes: usize,
    ledges: usize,
    role_pairs: usize,
    role_sizes: Vec<usize>,
}

fn transform(a: TransformArgs, seed: u64) -> Result<()> {
    if a.n_roles == 0 {
        bail!("--n-roles must be >= 1");
    }
    let data = read_dataset(&a.input)?;
    let lines = data
        .par_iter()
        .enumerate()
        .map(|(index, s)| -> Result<String> {
            let lg = LineGraph::build(s)?;
            let (assignment, adjacency) = roles::extract(&lg, a.n_roles, seed);
            let line = if a.dump {
                serde_json::to_string(&lg.dump(Some(&assignment.role_of)))?
            } else {
                let mut role_sizes = vec![0; assignment.n_roles];
                for &r in &assignment.role_of {
                    role_sizes[r] += 1;
                }
                serde_json::to_string(&TransformSummary {
                    index,
                    nodes: s.topology.node_count(),
                    lnodes: lg.lnode_count(),
                    ledges: lg.ledges().len(),
                    role_pairs: adjacency.len(),
                    role_sizes,
                })?
            };
            Ok(line)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_text(&a.out, &text)?;
    let mut m = RunManifest::new("transform");
    m.seeds.push(seed);
    m.input(&a.input)?;
    m.output(&a.out)?;
    m.write(&manifest::beside(&a.out))?;
    Ok(())
}

fn model_config(path: Option<&Path>, readout: Option<ReadoutArg>, seed: u64) -> Result<ModelConfig> {
    let mut cfg = match path {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ModelConfig {
            role_seed: seed,
            ..ModelConfig::default()
        },
    };
    if let Some(r) = readout {
        cfg.readout = r.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(a: &TrainingArgs, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match &a.train_config {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => {
            let base = match a.train_preset {
                TrainPreset::Desk => TrainConfig::desk(),
                TrainPreset::Full => TrainConfig::full(),
            };
            let count = base.seeds.len() as u64;
            TrainConfig {
                seeds: (seed..seed + count).collect(),
                ..base
            }
        }
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.samples_per_epoch {
        cfg.samples_per_epoch = s;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if a.patience.is_some() {
        cfg.patience = a.patience;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// First 10% (at least one) validates; the rest is the test set.
fn split_holdout(data: Vec<PreparedSnapshot>) -> (Vec<PreparedSnapshot>, Vec<PreparedSnapshot>) {
    if data.len() < 2 {
        return (Vec::new(), data);
    }
    let n_val = (data.len() / 10).max(1);
    let mut data = data;
    let test = data.split_off(n_val);
    (data, test)
}

fn buckets_for(data: &[PreparedSnapshot], width: usize) -> Result<Vec<SizeBucket>> {
    if width == 0 {
        bail!("--bucket-width must be >= 1");
    }
    let lo = data.iter().map(|s| s.node_count).min().unwrap_or(0);
    let hi = data.iter().map(|s| s.node_count).max().unwrap_or(0);
    let lo = lo / width * width;
    Ok(size_buckets(lo, hi.max(lo + 1), width))
}

fn divergence_note(reports: &[ConfigReport]) -> Option<String> {
    let diverged: Vec<String> = reports
        .iter()
        .flat_map(|c| {
            c.seeds.iter().filter_map(move |s| {
                s.diverged
                    .as_ref()
                    .map(|d| format!("{} seed {} at epoch {} step {}", c.name, s.seed, d.epoch, d.step))
            })
        })
        .collect();
    (!diverged.is_empty()).then(|| diverged.join("; "))
}

fn write_report(dir: &Path, report: &TrainReport, m: &mut RunManifest) -> Result<()> {
    let json = dir.join("report.json");
    let csv = dir.join("report.csv");
    write_text(&json, &report.to_json())?;
    write_text(&csv, &report.to_csv())?;
    m.output(&json)?;
    m.output(&csv)?;
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let mcfg = model_config(a.model.model_config.as_deref(), a.model.readout, seed)?;
    let tcfg = train_config(&a.training, seed)?;
    let mut m = RunManifest::new("train");
    m.seeds = tcfg.seeds.clone();
    for p in [&a.model.model_config, &a.training.train_config].into_iter().flatten() {
        m.config(p)?;
    }
    m.input(&a.train)?;
    let train_set = prepare(&read_dataset(&a.train)?, &mcfg)?;
    let (validation, test) = match &a.holdout {
        Some(p) => {
            m.input(p)?;
            split_holdout(prepare(&read_dataset(p)?, &mcfg)?)
        }
        None => (Vec::new(), Vec::new()),
    };
    let runs = trainer::train(&train_set, &validation, &mcfg, &tcfg)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cfg_path = a.out.join("model_config.json");
    write_json(&cfg_path, &mcfg)?;
    write_json(&a.out.join("train_config.json"), &tcfg)?;
    m.output(&cfg_path)?;
    m.output(&a.out.join("train_config.json"))?;
    for r in &runs {
        let p = a.out.join(format!("checkpoint-seed{}.json", r.seed));
        write_text(&p, &r.model.to_checkpoint())?;
        m.output(&p)?;
    }
    let score = |r: &trainer::SeedRun| {
        r.epochs
            .iter()
            .find(|e| e.epoch == r.best_epoch)
            .map_or(f64::INFINITY, |e| e.validation_mape.unwrap_or(e.train_mape))
    };
    let best = runs
        .iter()
        .min_by(|x, y| score(x).total_cmp(&score(y)))
        .expect("at least one seed");
    let best_path = a.out.join("checkpoint.json");
    write_text(&best_path, &best.model.to_checkpoint())?;
    m.output(&best_path)?;

    let evaluations = if test.is_empty() {
        vec![None; runs.len()]
    } else {
        let buckets = buckets_for(&test, a.bucket_width)?;
        runs.iter()
            .map(|r| trainer::evaluate(&r.model, &test, &buckets, true).map(Some))
            .collect::<Result<Vec<_>, _>>()?
    };
    let baseline = if test.is_empty() {
        None
    } else {
        let buckets = buckets_for(&test, a.bucket_width)?;
        Some(trainer::evaluate(&ConstantBaseline::fit(&train_set), &test, &buckets, false)?)
    };
    let name = trainer::readout_name(mcfg.readout);
    let report = TrainReport {
        train: tcfg,
        configs: vec![ConfigReport::from_runs(name, &mcfg, &runs, evaluations)],
        baseline,
    };
    write_report(&a.out, &report, &mut m)?;
    m.write(&a.out.join("manifest.json"))?;
    for c in &report.configs {
        if let Some(v) = c.mape_mean {
            eprintln!("{}: test MAPE {:.3}%", c.name, v);
        }
    }
    match divergence_note(&report.configs) {
        Some(note) => Err(Diverged(note).into()),
        None => Ok(()),
    }
}

fn load_model(a: &CheckpointArgs) -> Result<(LatencyModel, PathBuf)> {
    let cfg_path = match &a.model_config {
        Some(p) => p.clone(),
        None => a.checkpoint.with_file_name("model_config.json"),
    };
    let cfg: ModelConfig =
        serde_json::from_str(&read_text(&cfg_path)?).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let text = read_text(&a.checkpoint)?;
    let model = LatencyModel::from_checkpoint(cfg, &text)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    Ok((model, cfg_path))
}

#[derive(Serialize)]
struct PredictionLine {
    index: usize,
    /// `[src, dst, latency]` in traffic order.
    pairs: Vec<(usize, usize, f64)>,
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, cfg_path) = load_model(&a.checkpoint)?;
    let data = read_dataset(&a.input)?;
    let prepared = prepare(&data, &model.config)?;
    let lines = prepared
        .par_iter()
        .zip(&data)
        .enumerate()
        .map(|(index, (p, s))| -> Result<String> {
            let latency = model.predict(p)?.path_latency;
            let pairs = s
                .traffic
                .pairs
                .iter()
                .zip(latency)
                .map(|(od, l)| (od.src, od.dst, l))
                .collect();
            Ok(serde_json::to_string(&PredictionLine { index, pairs })?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_text(&a.out, &text)?;
    let mut m = RunManifest::new("predict");
    m.config(&cfg_path)?;
    m.input(&a.checkpoint.checkpoint)?;
    m.input(&a.input)?;
    m.output(&a.out)?;
    m.write(&manifest::beside(&a.out))?;
    Ok(())
}

fn evaluation_csv(name: &str, e: &Evaluation) -> String {
    let mut out = format!("{}\n", trainer::CSV_HEADER);
    for b in &e.buckets {
        let f = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{name},-,{},{},{},{},{}\n",
            b.bucket.lo,
            b.bucket.hi,
            f(b.mape_mean),
            f(b.mape_std),
            f(b.infer_ms_mean)
        ));
    }
    out
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (model, cfg_path) = load_model(&a.checkpoint)?;
    let data = prepare(&read_dataset(&a.input)?, &model.config)?;
    let buckets = buckets_for(&data, a.bucket_width)?;
    let eval = trainer::evaluate(&model, &data, &buckets, !a.no_timing)?;
    let json = a.out.join("evaluation.json");
    let csv = a.out.join("evaluation.csv");
    write_json(&json, &eval)?;
    write_text(&csv, &evaluation_csv(trainer::readout_name(model.config.readout), &eval))?;
    let mut m = RunManifest::new("evaluate");
    m.config(&cfg_path)?;
    m.input(&a.checkpoint.checkpoint)?;
    m.input(&a.input)?;
    m.output(&json)?;
    m.output(&csv)?;
    m.write(&a.out.join("manifest.json"))?;
    eprintln!("MAPE {:.3}% over {} snapshots", eval.mape(), eval.snapshots.len());
    Ok(())
}

fn ablate(a: AblateArgs, seed: u64) -> Result<()> {
    let mcfg = model_config(a.model_config.as_deref(), None, seed)?;
    let tcfg = train_config(&a.training, seed)?;
    let mut m = RunManifest::new("ablate");
    m.seeds = tcfg.seeds.clone();
    for p in [&a.model_config, &a.training.train_config].into_iter().flatten() {
        m.config(p)?;
    }
    m.input(&a.train)?;
    m.input(&a.holdout)?;
    let train_set = prepare(&read_dataset(&a.train)?, &mcfg)?;
    let (validation, test) = split_holdout(prepare(&read_dataset(&a.holdout)?, &mcfg)?);
    if test.is_empty() {
        bail!("holdout needs at least two snapshots");
    }
    let buckets = buckets_for(&test, a.bucket_width)?;
    let configs = trainer::ablate(
        &train_set,
        &validation,
        &test,
        &mcfg,
        &[Readout::Nalu, Readout::Mlp],
        &tcfg,
        &buckets,
    )?;
    let baseline = trainer::evaluate(&ConstantBaseline::fit(&train_set), &test, &buckets, false)?;
    let report = TrainReport {
        train: tcfg,
        configs,
        baseline: Some(baseline),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_report(&a.out, &report, &mut m)?;
    m.write(&a.out.join("manifest.json"))?;
    for c in &report.configs {
        let var = c.mape_variance.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!("{}: MAPE {:.3}% variance {}", c.name, c.mape_mean.unwrap_or(f64::NAN), var);
    }
    match divergence_note(&report.configs) {
        Some(note) => Err(Diverged(note).into()),
        None => Ok(()),
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let report: TrainReport =
        serde_json::from_str(&read_text(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut m = RunManifest::new("report");
    m.input(&a.input)?;

    let buckets_csv = a.out.join("buckets.csv");
    write_text(&buckets_csv, &report.to_csv())?;

    let mut ablation = String::from("config,seed,mape\n");
    for c in &report.configs {
        for (s, v) in c.seeds.iter().zip(&c.seed_mape) {
            ablation.push_str(&format!("{},{},{v:.6}\n", c.name, s.seed));
        }
    }
    let ablation_csv = a.out.join("ablation.csv");
    write_text(&ablation_csv, &ablation)?;

    let mid = |b: &SizeBucket| (b.lo + b.hi) as f64 / 2.0;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = report
        .configs
        .iter()
        .map(|c| {
            let pts = c
                .buckets
                .iter()
                .filter_map(|b| b.mape_mean.map(|v| (mid(&b.bucket), v)))
                .collect();
            (c.name.clone(), pts)
        })
        .collect();
    if let Some(e) = &report.baseline {
        let pts = e
            .buckets
            .iter()
            .filter_map(|b| b.mape_mean.map(|v| (mid(&b.bucket), v)))
            .collect();
        series.push(("constant".into(), pts));
    }
    let buckets_svg = a.out.join("buckets.svg");
    write_text(&buckets_svg, &svg::line_chart("Test MAPE by graph size", "MAPE (%)", &series))?;

    let groups: Vec<(String, Vec<f64>)> = report
        .configs
        .iter()
        .map(|c| (c.name.clone(), c.seed_mape.clone()))
        .collect();
    let ablation_svg = a.out.join("ablation.svg");
    write_text(&ablation_svg, &svg::box_chart("Across-seed MAPE", "MAPE (%)", &groups))?;

    for p in [&buckets_csv, &ablation_csv, &buckets_svg, &ablation_svg] {
        m.output(p)?;
    }
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let m: RunManifest =
        serde_json::from_str(&read_text(&a.manifest)?).with_context(|| format!("parsing {}", a.manifest.display()))?;
    let stale = m.stale_files();
    if stale.is_empty() {
        eprintln!("{} files verified", m.inputs.len() + m.outputs.len());
        Ok(())
    } else {
        bail!("changed or missing: {}", stale.join(", "))
    }
}
