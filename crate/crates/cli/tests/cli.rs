use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = "schema_version = 1
precision = f64
seed = 3
model.layers = 1
model.heads = 2
model.d_k = 4
model.dim_f = 8
model.dim_c = 16
model.dim_v = 32
model.window = 4
model.stride = 2
pretrain.steps = 6
pretrain.batch_size = 4
finetune.steps = 8
finetune.batch_size = 4
";

fn hiskel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiskel")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hiskel(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    hiskel(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn spec(classes: &str, n: usize, seed: u64, extra: &str) -> String {
    format!(r#"{{"classes": [{classes}], "n_per_class": {n}, "T": 16, "fps": 10.0, "noise_std": 0.01, "seed": {seed}{extra}}}"#)
}

const WAVES: &str = r#"{"kind": "wave", "side": "left"}, {"kind": "wave", "side": "right"}"#;

/// Generates a dataset and returns its path.
fn gen(dir: &Path, name: &str, spec_text: &str) -> PathBuf {
    let spec_path = dir.join(format!("{name}.json"));
    fs::write(&spec_path, spec_text).unwrap();
    let out = dir.join(name);
    ok(&["gen-data", "--config", s(&spec_path), "--out", s(&out)]);
    out.join("dataset.jsonl")
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train", &spec(WAVES, 6, 1, ""));
    let test = gen(dir.path(), "test", &spec(WAVES, 3, 2, ""));
    let config = dir.path().join("run.kv");
    fs::write(&config, format!("{TINY}data.train = {}\ndata.test = {}\n", s(&train), s(&test))).unwrap();
    Fixture { dir, config }
}

impl Fixture {
    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }
}

#[test]
fn gen_data_is_reproducible_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", &spec(WAVES, 5, 9, ""));
    let b = gen(dir.path(), "b", &spec(WAVES, 5, 9, ""));
    assert!(fs::read(&a).unwrap() == fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    let labels: Vec<i64> = text.lines().skip(1).map(|l| serde_json::from_str::<Value>(l).unwrap()["label"].as_i64().unwrap()).collect();
    assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 5);
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 5);
    let manifest = json(&dir.path().join("a/manifest.json"));
    assert_eq!(manifest["command"], "gen-data");
    assert!(manifest["outputs"]["dataset.jsonl"]["sha256"].is_string());
}

#[test]
fn usage_errors_exit_with_two() {
    let f = fixture();
    let out = f.path("x");
    assert_eq!(code(&["gen-data", "--config", s(&f.path("missing.json")), "--out", s(&out)]), 2);
    assert_eq!(code(&["pretrain", "--config", s(&f.config), "--levels", "-", "--out", s(&out)]), 2);
    assert_eq!(code(&["finetune", "--config", s(&f.config), "--label-fraction", "1.5", "--out", s(&out)]), 2);
    assert_eq!(code(&["finetune", "--config", s(&f.config), "--label-fraction", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["finetune", "--config", s(&f.config), "--from-checkpoint", s(&f.path("nope.ckpt")), "--out", s(&out)]), 2);
    assert_eq!(code(&["finetune", "--config", s(&f.config), "--task", "dance", "--out", s(&out)]), 2);
    assert_eq!(code(&["eval", "--out", s(&out)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let f = fixture();
    let bad = f.path("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(code(&["finetune", "--config", s(&f.config), "--from-checkpoint", s(&bad), "--out", s(&f.path("x"))]), 1);
}

#[test]
fn pretrain_writes_log_checkpoint_and_manifest() {
    let f = fixture();
    let out = f.path("pre");
    ok(&["pretrain", "--config", s(&f.config), "--out", s(&out)]);
    let log = fs::read_to_string(out.join("pretrain.log")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["step"], i as u64 + 1);
        let parts: f64 = ["spatial", "clip_order", "video_order", "discriminative"].iter().map(|k| l[k].as_f64().unwrap()).sum();
        assert!((parts - l["total"].as_f64().unwrap()).abs() <= 1e-12);
    }
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 3);
    assert!(m["config"].as_str().unwrap().contains("data.frames = 0"));
    assert!(m["config"].as_str().unwrap().contains("pretrain.levels = F+C+V"));
    assert!(m["inputs"]["data.train"]["sha256"].is_string());
    assert!(m["outputs"]["pretrain.ckpt"]["sha256"].is_string());
}

#[test]
fn frame_level_only_logs_the_spatial_loss() {
    let f = fixture();
    let out = f.path("pre");
    ok(&["pretrain", "--config", s(&f.config), "--levels", "F", "--out", s(&out)]);
    let first: Value = serde_json::from_str(fs::read_to_string(out.join("pretrain.log")).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["spatial"].is_f64());
    assert!(first.get("clip_order").is_none() && first.get("discriminative").is_none());
}

#[test]
fn resume_and_replay_reproduce_the_checkpoint() {
    let f = fixture();
    let full = f.path("full");
    ok(&["pretrain", "--config", s(&f.config), "--out", s(&full)]);
    let half = f.path("half");
    let short = f.path("short.kv");
    fs::write(&short, fs::read_to_string(&f.config).unwrap().replace("pretrain.steps = 6", "pretrain.steps = 3")).unwrap();
    ok(&["pretrain", "--config", s(&short), "--out", s(&half)]);
    let resumed = f.path("resumed");
    ok(&["pretrain", "--config", s(&f.config), "--resume", s(&half.join("pretrain.ckpt")), "--out", s(&resumed)]);
    let want = fs::read(full.join("pretrain.ckpt")).unwrap();
    assert!(fs::read(resumed.join("pretrain.ckpt")).unwrap() == want, "resumed run differs");
    let replay = f.path("replay");
    ok(&["pretrain", "--config", s(&full.join("manifest.json")), "--out", s(&replay)]);
    assert!(fs::read(replay.join("pretrain.ckpt")).unwrap() == want, "replayed run differs");
    assert_eq!(code(&["finetune", "--config", s(&full.join("manifest.json")), "--out", s(&replay)]), 2);
}

#[test]
fn finetune_then_eval_agree_and_eval_is_repeatable() {
    let f = fixture();
    let pre = f.path("pre");
    ok(&["pretrain", "--config", s(&f.config), "--out", s(&pre)]);
    let ft = f.path("ft");
    ok(&["finetune", "--config", s(&f.config), "--from-checkpoint", s(&pre.join("pretrain.ckpt")), "--label-fraction", "0.5", "--out", s(&ft)]);
    let report = json(&ft.join("report.json"));
    assert_eq!(report["task"], "recognition");
    assert_eq!(report["train_size"], 6);
    let top1 = report["metrics"]["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    let test = json(&ft.join("manifest.json"))["inputs"]["data.test"]["path"].as_str().unwrap().to_string();
    let (e1, e2) = (f.path("e1"), f.path("e2"));
    for e in [&e1, &e2] {
        ok(&["eval", "--from-checkpoint", s(&ft.join("model.ckpt")), "--data", &test, "--out", s(e)]);
    }
    let r1 = fs::read(e1.join("report.json")).unwrap();
    assert_eq!(r1, fs::read(e2.join("report.json")).unwrap());
    let evaluated = json(&e1.join("report.json"));
    assert_eq!(evaluated["metrics"]["top1"].as_f64().unwrap(), top1);
    assert_eq!(evaluated["scores"], report["scores"]);
    let model = s(&ft.join("model.ckpt")).to_string();
    assert_eq!(code(&["eval", "--from-checkpoint", &model, "--data", &test, "--task", "detection", "--out", s(&e1)]), 2);
    assert_eq!(code(&["eval", "--from-checkpoint", &model, "--data", &test, "--stream", "bone", "--out", s(&e1)]), 2);
    assert_eq!(code(&["eval", "--from-checkpoint", s(&pre.join("pretrain.ckpt")), "--data", &test, "--out", s(&e1)]), 2);
}

#[test]
fn incompatible_checkpoint_names_the_field() {
    let f = fixture();
    let pre = f.path("pre");
    ok(&["pretrain", "--config", s(&f.config), "--out", s(&pre)]);
    let wide = f.path("wide.kv");
    fs::write(&wide, fs::read_to_string(&f.config).unwrap().replace("model.dim_f = 8", "model.dim_f = 12")).unwrap();
    let out = hiskel(&["finetune", "--config", s(&wide), "--from-checkpoint", s(&pre.join("pretrain.ckpt")), "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim_f"));
}

#[test]
fn sequences_can_be_resampled_on_load() {
    let f = fixture();
    let out = f.path("long");
    ok(&["pretrain", "--config", s(&f.config), "--levels", "F", "--out", s(&out)]);
    let resampled = f.path("resampled.kv");
    fs::write(&resampled, fs::read_to_string(&f.config).unwrap() + "data.frames = 10\n").unwrap();
    let short = f.path("short");
    ok(&["pretrain", "--config", s(&resampled), "--levels", "F", "--out", s(&short)]);
    assert!(fs::read(out.join("pretrain.ckpt")).unwrap() != fs::read(short.join("pretrain.ckpt")).unwrap());
    fs::write(&resampled, fs::read_to_string(&f.config).unwrap() + "data.frames = 2\n").unwrap();
    assert_eq!(code(&["pretrain", "--config", s(&resampled), "--levels", "C", "--out", s(&short)]), 1);
}

#[test]
fn same_seed_gives_the_same_report() {
    let f = fixture();
    let (a, b) = (f.path("a"), f.path("b"));
    for d in [&a, &b] {
        ok(&["finetune", "--config", s(&f.config), "--random-init", "--out", s(d)]);
    }
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert!(fs::read(a.join("model.ckpt")).unwrap() == fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn stream_reports_fuse() {
    let f = fixture();
    let mut reports = Vec::new();
    for stream in ["joint", "bone", "motion"] {
        let out = f.path(stream);
        ok(&["finetune", "--config", s(&f.config), "--stream", stream, "--out", s(&out)]);
        reports.push(out.join("report.json"));
    }
    let fused = f.path("fused");
    let mut args = vec!["eval", "--out", s(&fused), "--fuse"];
    args.extend(reports.iter().map(|p| s(p)));
    ok(&args);
    let r = json(&fused.join("report.json"));
    assert_eq!(r["stream"], "joint+bone+motion");
    assert!(r["metrics"]["top1"].is_f64());
    assert!(r["metrics"]["top1.bone"].is_f64());
    let n = r["labels"].as_array().unwrap().len();
    assert_eq!(r["scores"].as_array().unwrap().len(), n);
}

#[test]
fn detection_and_motion_heads_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let layout = r#", "layout": {"kind": "untrimmed", "segments": 1, "min_len": 4, "max_len": 6, "min_gap": 2}"#;
    let raise = r#"{"kind": "raise"}"#;
    let train = gen(dir.path(), "dtrain", &spec(raise, 4, 1, layout));
    let test = gen(dir.path(), "dtest", &spec(raise, 2, 2, layout));
    let config = dir.path().join("d.kv");
    fs::write(&config, format!("{TINY}task = detection\nfinetune.frames_per_sequence = 4\ndata.train = {}\ndata.test = {}\n", s(&train), s(&test))).unwrap();
    let ft = dir.path().join("ft");
    ok(&["finetune", "--config", s(&config), "--out", s(&ft)]);
    let e = dir.path().join("e");
    ok(&["eval", "--from-checkpoint", s(&ft.join("model.ckpt")), "--data", s(&test), "--out", s(&e)]);
    let r = json(&e.join("report.json"));
    assert_eq!(r["metrics"], json(&ft.join("report.json"))["metrics"]);
    assert!(r["metrics"]["map_a"].is_f64() && r["metrics"]["map_v"].is_f64());

    let moving = r#"{"kind": "translate", "min_speed": 0.5, "max_speed": 1.0}"#;
    let train = gen(dir.path(), "mtrain", &spec(moving, 4, 3, ""));
    let test = gen(dir.path(), "mtest", &spec(moving, 2, 4, ""));
    let config = dir.path().join("m.kv");
    let keys = "task = motion\nfinetune.decoder = lstm\nfinetune.decoder_hidden = 8\nfinetune.observe_frames = 12\nfinetune.predict_frames = 4\n";
    fs::write(&config, format!("{TINY}{keys}data.train = {}\ndata.test = {}\n", s(&train), s(&test))).unwrap();
    let ft = dir.path().join("mft");
    ok(&["finetune", "--config", s(&config), "--out", s(&ft)]);
    let e = dir.path().join("me");
    ok(&["eval", "--from-checkpoint", s(&ft.join("model.ckpt")), "--data", s(&test), "--out", s(&e)]);
    let r = json(&e.join("report.json"));
    assert_eq!(r["metrics"], json(&ft.join("report.json"))["metrics"]);
    assert!(r["metrics"]["mpjpe_mm"].as_f64().unwrap() > 0.0);
}

#[test]
fn ablate_tabulates_every_subset() {
    let f = fixture();
    let config = f.path("ab.kv");
    fs::write(&config, fs::read_to_string(&f.config).unwrap() + "ablate.subsets = -,F,F+C+V\n").unwrap();
    let out = f.path("ab");
    let stdout = String::from_utf8(ok(&["ablate", "--config", s(&config), "--out", s(&out)]).stdout).unwrap();
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert_eq!(stdout, table);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("metric\t-\tF\tF+C+V"));
    assert!(lines.next().unwrap().starts_with("top1\t"));
    assert!(out.join("pretrain-F.ckpt").is_file() && out.join("pretrain-F+C+V.ckpt").is_file());
    assert_eq!(json(&out.join("ablation.json")).as_array().unwrap().len(), 3);
}
