use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hiskel_autodiff::Real;
use hiskel_core::config::KvConfig;
use hiskel_core::data::{generate_synthetic, load_dataset, resample, save_dataset, SkeletonSequence, Stream, SyntheticSpec};
use hiskel_core::downstream::{accuracy, argmax, fuse_scores};
use hiskel_core::train::{
    evaluate_detection, evaluate_motion, evaluate_recognition, finetune_detection, finetune_motion, finetune_recognition,
    motion_task_for, FinetuneReport, Task, TaskModel,
};
use hiskel_core::{Checkpoint, Error, PretrainSession, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::settings::{Precision, Settings};
use crate::Common;

/// Bad invocation or missing input; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        usage(format!("{what} '{}' does not exist", path.display()))
    }
}

/// Config text for `command`: the file itself, or the resolved config of a
/// manifest written by an earlier run of the same command.
fn config_text(common: &Common, command: &str, required: bool) -> Result<(Option<PathBuf>, String)> {
    let Some(path) = &common.config else {
        if required {
            return usage(format!("{command} needs --config"));
        }
        return Ok((None, "schema_version = 1\n".into()));
    };
    require_file("config file", path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match RunManifest::parse(&text) {
        Some(m) if m.command != command => usage(format!("{} is a manifest of '{}', not '{command}'", path.display(), m.command)),
        Some(m) => Ok((Some(path.clone()), m.config)),
        None => Ok((Some(path.clone()), text)),
    }
}

fn settings(text: &str, common: &Common) -> Result<(Settings, KvConfig)> {
    let mut kv = KvConfig::parse(text)?;
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
    }
    if let Some(l) = &common.levels {
        kv.set("pretrain.levels", l);
    }
    if let Some(f) = common.label_fraction {
        kv.set("finetune.label_fraction", f);
    }
    if let Some(t) = &common.task {
        kv.set("task", t);
    }
    if let Some(s) = &common.stream {
        kv.set("stream", s);
    }
    if let Some(p) = &common.from_checkpoint {
        kv.set("finetune.from", p.display());
    }
    if common.random_init {
        kv.remove("finetune.from");
    }
    if !common.fuse.is_empty() {
        let list: Vec<String> = common.fuse.iter().map(|p| p.display().to_string()).collect();
        kv.set("eval.fuse", list.join(","));
    }
    let s = Settings::from_kv(&kv)?;
    Ok((s, kv))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let out = std::path::absolute(&common.out).unwrap_or_else(|_| common.out.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

/// Loads, optionally resamples to `frames`, then applies the stream view.
fn dataset(path: Option<&Path>, key: &str, frames: usize, stream: Stream) -> Result<Vec<SkeletonSequence>> {
    let Some(p) = path else {
        return usage(format!("the config must set {key}"));
    };
    let raw = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
    let view = |s: &SkeletonSequence| match frames {
        0 => stream.apply(s),
        n => stream.apply(&resample(s, n)?),
    };
    Ok(raw.iter().map(view).collect::<hiskel_core::Result<_>>()?)
}

fn input(m: &mut RunManifest, key: &str, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        require_file(key, p)?;
        m.input(key, p)?;
    }
    Ok(())
}

fn save_checkpoint(ck: &Checkpoint, path: &Path, m: &mut RunManifest) -> Result<()> {
    ck.save(path).with_context(|| format!("writing {}", path.display()))?;
    m.output(path)
}

fn write_json<T: Serialize>(value: &T, path: &Path, m: &mut RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    m.output(path)
}

/// Same entries as `b`, or the first key where they differ.
fn first_key_difference(a: &KvConfig, b: &KvConfig) -> Option<(String, String, String)> {
    let a: BTreeMap<_, _> = a.entries().collect();
    let b: BTreeMap<_, _> = b.entries().collect();
    a.keys().chain(b.keys()).find_map(|k| {
        let (x, y) = (a.get(k).copied().unwrap_or("<unset>"), b.get(k).copied().unwrap_or("<unset>"));
        (x != y).then(|| (k.to_string(), x.to_string(), y.to_string()))
    })
}

/// Metrics file written by `finetune` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub stream: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<(u64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    /// Ground truth and class probabilities per test sequence (recognition).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<Vec<f64>>,
}

impl Report {
    fn new(task: Task, stream: &str, metrics: BTreeMap<String, f64>) -> Self {
        Report {
            task: task.to_string(),
            stream: stream.to_string(),
            metrics,
            curve: Vec::new(),
            train_size: None,
            steps: None,
            labels: Vec::new(),
            scores: Vec::new(),
        }
    }

    fn from_finetune(r: FinetuneReport, stream: Stream, test: &[SkeletonSequence]) -> Self {
        let labels = if r.task == Task::Recognition { test.iter().filter_map(|s| s.label()).collect() } else { Vec::new() };
        Report {
            curve: r.curve,
            train_size: Some(r.train_size),
            steps: Some(r.steps),
            labels,
            scores: r.scores,
            ..Report::new(r.task, stream.name(), r.metrics)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        require_file("report", path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
    }
}

/// Headline metric of a task, as printed in the ablation table.
fn headline(task: Task) -> &'static str {
    match task {
        Task::Recognition => "top1",
        Task::Detection => "map_v",
        Task::Motion => "mpjpe_mm",
    }
}

fn print_metrics(metrics: &BTreeMap<String, f64>) {
    let parts: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
    println!("{}", parts.join(" "));
}

pub fn gen_data(common: &Common) -> Result<()> {
    if common.levels.is_some()
        || common.label_fraction.is_some()
        || common.task.is_some()
        || common.stream.is_some()
        || common.from_checkpoint.is_some()
        || common.random_init
        || !common.fuse.is_empty()
    {
        return usage("gen-data only takes --config, --seed and --out");
    }
    let (path, text) = config_text(common, "gen-data", true)?;
    let mut spec = SyntheticSpec::from_json(&text)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let out = out_dir(common)?;
    let mut m = RunManifest::new("gen-data", path.as_deref(), spec.to_json(), spec.seed, &out);
    m.write()?;
    let data = generate_synthetic(&spec)?;
    let file = out.join("dataset.jsonl");
    save_dataset(&file, &data)?;
    m.output(&file)?;
    m.write()?;
    println!("{} sequences -> {}", data.len(), file.display());
    Ok(())
}

/// One JSON line per step: step, active loss components, total, seconds.
fn log_line(log: &hiskel_core::train::StepLog, wall: f64) -> String {
    let mut fields = serde_json::Map::new();
    fields.insert("step".into(), log.step.into());
    for (name, v) in log.losses.components() {
        if let Some(v) = v {
            fields.insert(name.into(), v.into());
        }
    }
    fields.insert("total".into(), log.losses.total.into());
    fields.insert("step_s".into(), log.seconds.into());
    fields.insert("wall_s".into(), wall.into());
    serde_json::Value::Object(fields).to_string()
}

/// Pre-trains until `s.pretrain.steps`, writing `<stem>.log`, periodic
/// `<stem>-<step>.ckpt` files and the final `<stem>.ckpt`.
fn run_pretrain<F: Real>(s: &Settings, data: &[SkeletonSequence], out: &Path, stem: &str, m: &mut RunManifest) -> Result<Checkpoint> {
    let mut session = match &s.resume {
        None => PretrainSession::<F>::new(data, s.model.clone(), s.pretrain.clone())?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.ensure_compatible(&s.model)?;
            if ck.scalar != F::NAME {
                return Err(Error::Incompatible { field: "precision".into(), found: ck.scalar.clone(), requested: F::NAME.into() }.into());
            }
            // Only the step budget and checkpoint cadence may change on resume.
            let mut stored = TrainConfig::pretrain();
            stored.read_kv(&ck.config()?, "pretrain")?;
            stored.steps = s.pretrain.steps;
            stored.checkpoint_every = s.pretrain.checkpoint_every;
            let (mut a, mut b) = (KvConfig::new(), KvConfig::new());
            stored.write_kv(&mut a, "pretrain");
            s.pretrain.write_kv(&mut b, "pretrain");
            if let Some((field, found, requested)) = first_key_difference(&a, &b) {
                return Err(Error::Incompatible { field, found, requested }.into());
            }
            if ck.step > s.pretrain.steps {
                return usage(format!("checkpoint is at step {} beyond pretrain.steps = {}", ck.step, s.pretrain.steps));
            }
            let mut session = PretrainSession::<F>::resume(data, &ck)?;
            session.set_schedule(s.pretrain.steps, s.pretrain.checkpoint_every);
            session
        }
    };
    let log_path = out.join(format!("{stem}.log"));
    let file = OpenOptions::new().create(true).append(true).open(&log_path).with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let total = s.pretrain.steps;
    let every = (total / 10).max(1);
    let start = Instant::now();
    while session.step_count() < total {
        let entry = session.step()?;
        writeln!(log, "{}", log_line(&entry, start.elapsed().as_secs_f64()))?;
        if entry.step % every == 0 || entry.step == total {
            eprintln!("[{stem}] step {}/{total} loss {:.5}", entry.step, entry.losses.total);
        }
        let ce = s.pretrain.checkpoint_every;
        if ce > 0 && entry.step % ce == 0 && entry.step < total {
            log.flush()?;
            save_checkpoint(&session.checkpoint(), &out.join(format!("{stem}-{:06}.ckpt", entry.step)), m)?;
        }
    }
    log.flush()?;
    drop(log);
    m.output(&log_path)?;
    let ck = session.checkpoint();
    save_checkpoint(&ck, &out.join(format!("{stem}.ckpt")), m)?;
    Ok(ck)
}

pub fn pretrain(common: &Common, resume: Option<&Path>) -> Result<()> {
    let (path, text) = config_text(common, "pretrain", true)?;
    let (mut s, _) = settings(&text, common)?;
    if let Some(r) = resume {
        s.resume = Some(std::path::absolute(r)?);
    }
    s.pretrain.validate_pretrain()?;
    s.stream = Some(s.stream());
    let out = out_dir(common)?;
    let mut m = RunManifest::new("pretrain", path.as_deref(), s.render(), s.seed, &out);
    input(&mut m, "data.train", s.train_data.as_deref())?;
    input(&mut m, "pretrain.resume", s.resume.as_deref())?;
    m.write()?;
    let data = dataset(s.train_data.as_deref(), "data.train", s.frames, s.stream())?;
    let ck = match s.precision {
        Precision::F32 => run_pretrain::<f32>(&s, &data, &out, "pretrain", &mut m)?,
        Precision::F64 => run_pretrain::<f64>(&s, &data, &out, "pretrain", &mut m)?,
    };
    m.write()?;
    println!("pretrained {} steps -> {}", ck.step, out.join("pretrain.ckpt").display());
    Ok(())
}

fn run_finetune<F: Real>(
    s: &Settings,
    task: Task,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    from: Option<&Checkpoint>,
) -> Result<(Report, Checkpoint)> {
    let tc = &s.finetune;
    let (report, model) = match task {
        Task::Recognition => {
            let run = finetune_recognition::<F>(train, test, &s.model, tc, from)?;
            (run.report, TaskModel::Recognition(run.model))
        }
        Task::Detection => {
            let run = finetune_detection::<F>(train, test, &s.model, tc, from)?;
            (run.report, TaskModel::Detection(run.model))
        }
        Task::Motion => {
            let run = finetune_motion::<F>(train, test, &s.model, tc, from)?;
            (run.report, TaskModel::Motion(run.model))
        }
    };
    let mut ck = model.checkpoint(tc);
    let mut kv = ck.config()?;
    kv.set("stream", s.stream().name());
    ck.config_text = kv.render();
    Ok((Report::from_finetune(report, s.stream(), test), ck))
}

fn load_from(s: &Settings) -> Result<Option<Checkpoint>> {
    Ok(s.from_checkpoint.as_deref().map(Checkpoint::load).transpose()?)
}

pub fn finetune(common: &Common) -> Result<()> {
    let (path, text) = config_text(common, "finetune", true)?;
    let (mut s, _) = settings(&text, common)?;
    let task = s.task.unwrap_or(Task::Recognition);
    s.task = Some(task);
    s.stream = Some(s.stream());
    s.finetune.validate()?;
    let out = out_dir(common)?;
    let mut m = RunManifest::new("finetune", path.as_deref(), s.render(), s.seed, &out);
    input(&mut m, "data.train", s.train_data.as_deref())?;
    input(&mut m, "data.test", s.test_data.as_deref())?;
    input(&mut m, "finetune.from", s.from_checkpoint.as_deref())?;
    m.write()?;
    let train = dataset(s.train_data.as_deref(), "data.train", s.frames, s.stream())?;
    let test = dataset(s.test_data.as_deref(), "data.test", s.frames, s.stream())?;
    let from = load_from(&s)?;
    let (report, ck) = match s.precision {
        Precision::F32 => run_finetune::<f32>(&s, task, &train, &test, from.as_ref())?,
        Precision::F64 => run_finetune::<f64>(&s, task, &train, &test, from.as_ref())?,
    };
    save_checkpoint(&ck, &out.join("model.ckpt"), &mut m)?;
    write_json(&report, &out.join("report.json"), &mut m)?;
    m.write()?;
    print_metrics(&report.metrics);
    Ok(())
}

fn run_eval<F: Real>(ck: &Checkpoint, test: &[SkeletonSequence], stream: Stream) -> Result<Report> {
    let model = TaskModel::<F>::restore(ck)?;
    let task = model.task();
    Ok(match &model {
        TaskModel::Recognition(m) => {
            let (acc, scores) = evaluate_recognition(m, test)?;
            Report {
                labels: test.iter().filter_map(|s| s.label()).collect(),
                scores,
                ..Report::new(task, stream.name(), BTreeMap::from([("top1".to_string(), acc)]))
            }
        }
        TaskModel::Detection(m) => Report::new(task, stream.name(), evaluate_detection(m, test)?),
        TaskModel::Motion(m) => {
            let mut tc = TrainConfig::finetune();
            tc.read_kv(&ck.config()?, "finetune")?;
            let fps = test.first().map(|s| s.fps()).ok_or_else(|| Usage("evaluation dataset is empty".into()))?;
            let mt = motion_task_for(&tc, fps)?;
            Report::new(task, stream.name(), evaluate_motion(m, test, &mt)?)
        }
    })
}

pub fn eval(common: &Common, data: Option<&Path>) -> Result<()> {
    let (path, text) = config_text(common, "eval", false)?;
    let (mut s, kv) = settings(&text, common)?;
    if let Some(d) = data {
        s.test_data = Some(std::path::absolute(d)?);
    }
    if !s.fuse.is_empty() {
        return fuse(common, path.as_deref(), &s);
    }
    let Some(ck_path) = s.from_checkpoint.clone() else {
        return usage("eval needs --from-checkpoint (or --fuse)");
    };
    let out = out_dir(common)?;
    let mut m = RunManifest::new("eval", path.as_deref(), s.render(), s.seed, &out);
    input(&mut m, "checkpoint", Some(&ck_path))?;
    input(&mut m, "data.test", s.test_data.as_deref())?;
    m.write()?;
    let ck = Checkpoint::load(&ck_path)?;
    let stored = ck.config()?;
    let Some(stored_task) = stored.get::<Task>("task")? else {
        return Err(Error::Config(format!("{} is a pre-training checkpoint; fine-tune it before evaluating", ck_path.display())).into());
    };
    if let Some(t) = s.task.filter(|&t| t != stored_task) {
        return Err(Error::Incompatible { field: "task".into(), found: stored_task.to_string(), requested: t.to_string() }.into());
    }
    let stream: Stream = stored.get("stream")?.unwrap_or_default();
    if let Some(r) = s.stream.filter(|&r| r != stream) {
        return Err(Error::Incompatible { field: "stream".into(), found: stream.name().into(), requested: r.name().into() }.into());
    }
    if kv.entries().any(|(k, _)| k.starts_with("model.")) {
        ck.ensure_compatible(&s.model)?;
    }
    let test = dataset(s.test_data.as_deref(), "data.test (or --data)", s.frames, stream)?;
    let report = match ck.scalar.as_str() {
        "f32" => run_eval::<f32>(&ck, &test, stream)?,
        "f64" => run_eval::<f64>(&ck, &test, stream)?,
        other => bail!("checkpoint scalar type '{other}' is not supported"),
    };
    write_json(&report, &out.join("report.json"), &mut m)?;
    m.write()?;
    print_metrics(&report.metrics);
    Ok(())
}

/// Late fusion of recognition reports: mean class probabilities per sequence.
fn fuse(common: &Common, path: Option<&Path>, s: &Settings) -> Result<()> {
    let out = out_dir(common)?;
    let mut m = RunManifest::new("eval", path, s.render(), s.seed, &out);
    for (i, p) in s.fuse.iter().enumerate() {
        input(&mut m, &format!("fuse.{i}"), Some(p))?;
    }
    m.write()?;
    let reports = s.fuse.iter().map(|p| Report::load(p)).collect::<Result<Vec<_>>>()?;
    let first = &reports[0];
    for (p, r) in s.fuse.iter().zip(&reports) {
        if r.task != Task::Recognition.to_string() || r.scores.is_empty() {
            return usage(format!("{} holds no recognition scores", p.display()));
        }
        if r.labels != first.labels || r.scores.len() != first.scores.len() {
            return usage(format!("{} was computed on a different test set", p.display()));
        }
    }
    let mut fused = Vec::with_capacity(first.scores.len());
    for i in 0..first.scores.len() {
        let sets: Vec<Vec<f64>> = reports.iter().map(|r| r.scores[i].clone()).collect();
        fused.push(fuse_scores(&sets)?);
    }
    let pred: Vec<usize> = fused.iter().map(|p| argmax(p)).collect();
    let mut metrics = BTreeMap::from([("top1".to_string(), accuracy(&pred, &first.labels))]);
    for r in &reports {
        if let Some(v) = r.metrics.get("top1") {
            metrics.insert(format!("top1.{}", r.stream), *v);
        }
    }
    let streams: Vec<&str> = reports.iter().map(|r| r.stream.as_str()).collect();
    let report = Report { labels: first.labels.clone(), scores: fused, ..Report::new(Task::Recognition, &streams.join("+"), metrics) };
    write_json(&report, &out.join("report.json"), &mut m)?;
    m.write()?;
    print_metrics(&report.metrics);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct AblationRow {
    levels: String,
    metrics: BTreeMap<String, f64>,
}

fn run_ablation<F: Real>(
    s: &Settings,
    task: Task,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    out: &Path,
    m: &mut RunManifest,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &levels in &s.subsets {
        let from = if levels.is_empty() {
            None
        } else {
            let mut ps = s.clone();
            ps.pretrain.levels = levels;
            ps.resume = None;
            Some(run_pretrain::<F>(&ps, train, out, &format!("pretrain-{levels}"), m)?)
        };
        let (report, _) = run_finetune::<F>(s, task, train, test, from.as_ref())?;
        eprintln!("[ablate] {levels}: {} = {:.4}", headline(task), report.metrics.get(headline(task)).copied().unwrap_or(f64::NAN));
        rows.push(AblationRow { levels: levels.to_string(), metrics: report.metrics });
    }
    Ok(rows)
}

/// Tab-separated table: one column per level subset, one row per metric.
fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("metric");
    for r in rows {
        out.push('\t');
        out.push_str(&r.levels);
    }
    out.push('\n');
    let names: Vec<&String> = rows.first().map(|r| r.metrics.keys().collect()).unwrap_or_default();
    for name in names {
        out.push_str(name);
        for r in rows {
            out.push_str(&format!("\t{:.4}", r.metrics.get(name).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

pub fn ablate(common: &Common) -> Result<()> {
    let (path, text) = config_text(common, "ablate", true)?;
    let (mut s, _) = settings(&text, common)?;
    let task = s.task.unwrap_or(Task::Recognition);
    s.task = Some(task);
    s.stream = Some(s.stream());
    s.finetune.validate()?;
    if s.subsets.is_empty() {
        return usage("ablate.subsets is empty");
    }
    for &levels in s.subsets.iter().filter(|l| !l.is_empty()) {
        let mut t = s.pretrain.clone();
        t.levels = levels;
        t.validate_pretrain()?;
    }
    let out = out_dir(common)?;
    let mut m = RunManifest::new("ablate", path.as_deref(), s.render(), s.seed, &out);
    input(&mut m, "data.train", s.train_data.as_deref())?;
    input(&mut m, "data.test", s.test_data.as_deref())?;
    m.write()?;
    let train = dataset(s.train_data.as_deref(), "data.train", s.frames, s.stream())?;
    let test = dataset(s.test_data.as_deref(), "data.test", s.frames, s.stream())?;
    let rows = match s.precision {
        Precision::F32 => run_ablation::<f32>(&s, task, &train, &test, &out, &mut m)?,
        Precision::F64 => run_ablation::<f64>(&s, task, &train, &test, &out, &mut m)?,
    };
    let table = ablation_table(&rows);
    let tsv = out.join("ablation.tsv");
    fs::write(&tsv, &table).with_context(|| format!("writing {}", tsv.display()))?;
    m.output(&tsv)?;
    write_json(&rows, &out.join("ablation.json"), &mut m)?;
    m.write()?;
    print!("{table}");
    Ok(())
}

/// 2 for usage and config problems, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Incompatible { .. } | Error::Argument(_)) => 2,
        _ => 1,
    }
}
