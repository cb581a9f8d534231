use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const PATH3: &str = r#"{"topology":{"n":3,"links":[[0,1,10000.0],[1,2,10000.0]]},"traffic":[[0,1,1000.0,1500.0],[0,2,1000.0,1500.0],[1,0,1000.0,1500.0],[1,2,1000.0,1500.0],[2,0,1000.0,1500.0],[2,1,1000.0,1500.0]],"routing":[[-1,1,1],[0,-1,2],[1,1,-1]]}"#;

fn netlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netlat"))
        .args(args)
        .env_remove("NETLAT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = netlat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_train_preset_sizes() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "train.jsonl");
    ok(&["gen", "--preset", "train", "--count", "50", "--seed", "1", "--out", s(&out)]);
    let data = lines(&out);
    assert_eq!(data.len(), 50);
    for d in &data {
        let n = d["topology"]["n"].as_u64().unwrap();
        assert!((25..=50).contains(&n), "{n}");
        assert!(d["performance"].is_object());
    }
    assert!(p(&dir, "train.jsonl.manifest.json").exists());
}

#[test]
fn gen_tiny_fixture() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "tiny.jsonl");
    ok(&["gen", "--n-min", "3", "--n-max", "3", "--count", "1", "--out", s(&out)]);
    let data = lines(&out);
    assert_eq!(data.len(), 1);
    assert_eq!(data[0]["topology"]["n"], 3);
}

#[test]
fn gen_infeasible_degree_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = netlat(&["gen", "--degree", "50", "--n-min", "10", "--out", s(&p(&dir, "x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degree"));
}

#[test]
fn seed_comes_from_environment() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.jsonl");
    let b = p(&dir, "b.jsonl");
    ok(&["gen", "--n-min", "6", "--n-max", "8", "--degree", "3", "--count", "3", "--seed", "7", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_netlat"))
        .args(["gen", "--n-min", "6", "--n-max", "8", "--degree", "3", "--count", "3", "--out", s(&b)])
        .env("NETLAT_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn transform_path_fixture_and_idempotence() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "path.jsonl");
    std::fs::write(&input, format!("{PATH3}\n")).unwrap();
    let summary = p(&dir, "summary.jsonl");
    ok(&["transform", "--in", s(&input), "--out", s(&summary)]);
    let rows = lines(&summary);
    assert_eq!(rows[0]["lnodes"], 4);
    assert_eq!(rows[0]["ledges"], 2);

    let d1 = p(&dir, "d1.jsonl");
    let d2 = p(&dir, "d2.jsonl");
    ok(&["transform", "--in", s(&input), "--out", s(&d1), "--dump"]);
    ok(&["transform", "--in", s(&input), "--out", s(&d2), "--dump"]);
    assert_eq!(std::fs::read(&d1).unwrap(), std::fs::read(&d2).unwrap());
    let dump = &lines(&d1)[0];
    for key in ["lnodes", "ledges", "features", "trajectories", "roles"] {
        assert!(dump.get(key).is_some(), "{key}");
    }
}

#[test]
fn transform_missing_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "nope.jsonl");
    let out = netlat(&["transform", "--in", s(&missing), "--out", s(&p(&dir, "o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let train = dir.path().join("train.jsonl");
        let hold = dir.path().join("hold.jsonl");
        ok(&["gen", "--n-min", "8", "--n-max", "12", "--degree", "3", "--count", "12", "--seed", "1", "--out", s(&train)]);
        ok(&["gen", "--n-min", "12", "--n-max", "20", "--degree", "3", "--count", "6", "--seed", "2", "--out", s(&hold)]);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (train, hold, out) = (self.path("train.jsonl"), self.path("hold.jsonl"), self.path(out));
        let mut args = vec![
            "train", "--train", s(&train), "--holdout", s(&hold), "--out", s(&out),
            "--epochs", "2", "--samples-per-epoch", "6", "--seeds", "0", "--bucket-width", "5",
        ];
        args.extend_from_slice(extra);
        netlat(&args)
    }
}

#[test]
fn pipeline_train_predict_evaluate_report() {
    let pl = Pipeline::new();
    let out = pl.train("run", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "checkpoint-seed0.json", "model_config.json", "report.json", "report.csv", "manifest.json"] {
        assert!(pl.path("run").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(pl.path("run/report.csv")).unwrap();
    assert!(csv.starts_with("config,seed,bucket_lo,bucket_hi,mape_mean,mape_std,infer_ms_mean"));

    let ckpt = pl.path("run/checkpoint.json");
    let hold = pl.path("hold.jsonl");
    let eval_dir = pl.path("eval");
    ok(&["evaluate", "--checkpoint", s(&ckpt), "--in", s(&hold), "--out", s(&eval_dir), "--bucket-width", "5"]);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("evaluation.json")).unwrap()).unwrap();

    let pred = pl.path("pred.jsonl");
    ok(&["predict", "--checkpoint", s(&ckpt), "--in", s(&hold), "--out", s(&pred)]);
    let preds = lines(&pred);
    let truth = lines(&hold);
    assert_eq!(preds.len(), truth.len());
    for (i, (pr, tr)) in preds.iter().zip(&truth).enumerate() {
        let predicted: Vec<f64> = pr["pairs"].as_array().unwrap().iter().map(|x| x[2].as_f64().unwrap()).collect();
        let actual: Vec<f64> = tr["performance"]["path_latency"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        let m = 100.0 * predicted.iter().zip(&actual).map(|(p, t)| ((p - t) / t).abs()).sum::<f64>() / actual.len() as f64;
        let reported = eval["snapshots"][i]["mape"].as_f64().unwrap();
        assert!((m - reported).abs() <= 1e-9 * reported.max(1.0), "{m} vs {reported}");
    }

    let rep = pl.path("rep");
    ok(&["report", "--in", s(&pl.path("run/report.json")), "--out", s(&rep)]);
    for f in ["buckets.csv", "buckets.svg", "ablation.csv", "ablation.svg", "manifest.json"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    assert!(std::fs::read_to_string(rep.join("buckets.svg")).unwrap().contains("<polyline"));
    ok(&["verify", s(&pl.path("run/manifest.json"))]);
}

#[test]
fn same_seed_trains_identically() {
    let pl = Pipeline::new();
    assert!(pl.train("a", &[]).status.success());
    assert!(pl.train("b", &[]).status.success());
    assert_eq!(
        std::fs::read(pl.path("a/checkpoint.json")).unwrap(),
        std::fs::read(pl.path("b/checkpoint.json")).unwrap()
    );
}

#[test]
fn predict_without_performance() {
    let pl = Pipeline::new();
    assert!(pl.train("run", &[]).status.success());
    let input = pl.path("bare.jsonl");
    std::fs::write(&input, format!("{PATH3}\n")).unwrap();
    let out = pl.path("pred.jsonl");
    ok(&["predict", "--checkpoint", s(&pl.path("run/checkpoint.json")), "--in", s(&input), "--out", s(&out)]);
    let pairs = lines(&out)[0]["pairs"].as_array().unwrap().clone();
    assert_eq!(pairs.len(), 6);
    assert!(pairs.iter().all(|x| x[2].as_f64().unwrap() > 0.0));
}

#[test]
fn evaluate_with_mismatched_config_exits_3() {
    let pl = Pipeline::new();
    assert!(pl.train("run", &[]).status.success());
    let text = std::fs::read_to_string(pl.path("run/model_config.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["embed_dim"] = 16.into();
    let other = pl.path("other.json");
    std::fs::write(&other, cfg.to_string()).unwrap();
    let out = netlat(&[
        "evaluate", "--checkpoint", s(&pl.path("run/checkpoint.json")), "--model-config", s(&other),
        "--in", s(&pl.path("hold.jsonl")), "--out", s(&pl.path("eval")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_4() {
    let pl = Pipeline::new();
    let cfg = pl.path("train.json");
    std::fs::write(
        &cfg,
        r#"{"lr":1e300,"epochs":2,"samples_per_epoch":6,"seeds":[0],"loss_weights":{"path":1.0,"link":0.5},"patience":null,"clip_norm":null}"#,
    )
    .unwrap();
    let out = pl.train("run", &["--train-config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(pl.path("run/report.json")).unwrap();
    assert!(report.contains("\"diverged\": {"));
}
