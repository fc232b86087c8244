use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use hiskel_autodiff::{no_grad, Real, Tensor};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::checkpoint::{restore_params, Checkpoint};
use crate::data::{Point, SkeletonSequence};
use crate::downstream::{
    accuracy, argmax, constant_pose, cross_entropy, detection_label, euclidean_loss, frames_to_segments, label_segments,
    mean_average_precision, mpjpe, softmax_rows, ApMode, DetectionModel, DetectionSegment, MotionModel, MotionTask,
    RecognitionModel,
};
use crate::encoder::{HierarchicalEncoder, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng;

pub const DETECTION_OVERLAP: f64 = 0.5;
const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Recognition,
    Detection,
    Motion,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Recognition => "recognition",
            Task::Detection => "detection",
            Task::Motion => "motion",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recognition" => Ok(Task::Recognition),
            "detection" => Ok(Task::Detection),
            "motion" => Ok(Task::Motion),
            _ => Err(Error::Config(format!("unknown task '{s}' (recognition, detection or motion)"))),
        }
    }
}

/// Indices of a `fraction`-sized training subset. Stratified sampling keeps
/// `round(fraction * n_c)` (at least one) of every class `c`.
pub fn label_subset(labels: &[usize], fraction: f64, stratified: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label_fraction must lie in (0, 1], got {fraction}")));
    }
    if labels.is_empty() {
        return Err(Error::Argument("no labelled sequences".into()));
    }
    let take = |n: usize| ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut out = Vec::new();
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        for members in by_class.values() {
            out.extend(index::sample(rng, members.len(), take(members.len())).into_iter().map(|k| members[k]));
        }
    } else {
        out.extend(index::sample(rng, labels.len(), take(labels.len())).into_iter());
    }
    out.sort_unstable();
    Ok(out)
}

/// Encoder for fine-tuning: random (init stream of the run seed) or loaded
/// from a compatible checkpoint.
pub fn init_encoder<F: Real>(config: &ModelConfig, from: Option<&Checkpoint>, rng: &mut ChaCha8Rng) -> Result<HierarchicalEncoder<F>> {
    let mut enc = HierarchicalEncoder::new(config.clone(), rng)?;
    if let Some(ck) = from {
        ck.ensure_compatible(config)?;
        restore_params(&mut enc, ck, |_| true)?;
    }
    Ok(enc)
}

/// Metrics of a fine-tuning or evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
    /// (step, held-out metric) at every `eval_every` steps
    pub curve: Vec<(u64, f64)>,
    pub train_size: usize,
    pub steps: u64,
    /// Per-sequence class probabilities (recognition only), for fusion.
    pub scores: Vec<Vec<f64>>,
}

impl FinetuneReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// First curve step whose metric reaches `target`.
    pub fn steps_to(&self, target: f64) -> Option<u64> {
        self.curve.iter().find(|(_, v)| *v >= target).map(|&(s, _)| s)
    }
}

fn require_labels(data: &[SkeletonSequence]) -> Result<Vec<usize>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| s.label().ok_or_else(|| Error::InvalidSequence(format!("sequence {i} has no class label"))))
        .collect()
}

fn draw_batch(pool: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    index::sample(rng, pool.len(), size.min(pool.len())).into_iter().map(|k| pool[k]).collect()
}

fn check_lengths(data: &[SkeletonSequence]) -> Result<()> {
    if let Some(first) = data.first() {
        if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.num_frames() != first.num_frames()) {
            return Err(Error::InvalidSequence(format!(
                "sequence {i} has {} frames but sequence 0 has {}; resample to a common length first",
                s.num_frames(),
                first.num_frames()
            )));
        }
    }
    Ok(())
}

fn finite_or_abort<F: Real>(loss: &Tensor<F>, step: u64) -> Result<f64> {
    let v = loss.item().to_f64().unwrap_or(f64::NAN);
    if !v.is_finite() {
        return Err(Error::NonFinite { step, detail: format!("fine-tuning loss {v}") });
    }
    Ok(v)
}

pub struct RecognitionRun<F: Real> {
    pub model: RecognitionModel<F>,
    pub report: FinetuneReport,
}

/// Top-1 accuracy and class probabilities on `data`.
pub fn evaluate_recognition<F: Real>(model: &RecognitionModel<F>, data: &[SkeletonSequence]) -> Result<(f64, Vec<Vec<f64>>)> {
    let labels = require_labels(data)?;
    let k = model.num_classes();
    let mut probs = Vec::with_capacity(data.len());
    no_grad(|| -> Result<()> {
        for chunk in data.chunks(EVAL_BATCH) {
            let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
            probs.extend(softmax_rows(&model.logits(&refs)?.to_f64_vec(), k));
        }
        Ok(())
    })?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok((accuracy(&pred, &labels), probs))
}

pub fn finetune_recognition<F: Real>(
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    config: &ModelConfig,
    tc: &TrainConfig,
    from: Option<&Checkpoint>,
) -> Result<RecognitionRun<F>> {
    tc.validate()?;
    check_lengths(train)?;
    let labels = require_labels(train)?;
    let test_labels = require_labels(test)?;
    let num_classes = labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);
    let mut init = rng::stream(tc.seed, rng::INIT);
    let encoder = init_encoder(config, from, &mut init)?;
    let mut model = RecognitionModel::new(encoder, num_classes, &mut init)?;
    let mut sampling = rng::stream(tc.seed, rng::SAMPLING);
    let subset = label_subset(&labels, tc.label_fraction, tc.stratified, &mut sampling)?;
    let mut opt = Adam::new(tc.adam(), &model);
    let mut curve = Vec::new();
    for step in 1..=tc.steps {
        let idx = draw_batch(&subset, tc.batch_size, &mut sampling);
        let batch: Vec<&SkeletonSequence> = idx.iter().map(|&i| &train[i]).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let loss = cross_entropy(&model.logits(&batch)?, &y)?;
        finite_or_abort(&loss, step)?;
        loss.backward()?;
        drop(loss);
        opt.step(&mut model)?;
        if tc.eval_every > 0 && step % tc.eval_every == 0 {
            curve.push((step, evaluate_recognition(&model, test)?.0));
        }
    }
    let (acc, scores) = evaluate_recognition(&model, test)?;
    let report = FinetuneReport {
        task: Task::Recognition,
        metrics: BTreeMap::from([("top1".to_string(), acc)]),
        curve,
        train_size: subset.len(),
        steps: tc.steps,
        scores,
    };
    Ok(RecognitionRun { model, report })
}

pub struct DetectionRun<F: Real> {
    pub model: DetectionModel<F>,
    pub report: FinetuneReport,
}

fn frame_labels(data: &[SkeletonSequence]) -> Result<Vec<&[i64]>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| s.frame_labels().ok_or_else(|| Error::InvalidSequence(format!("sequence {i} has no frame labels"))))
        .collect()
}

/// Per-frame predictions turned into segments, scored with mAP_a / mAP_v
/// at overlap 0.5, plus frame accuracy.
pub fn evaluate_detection<F: Real>(model: &DetectionModel<F>, data: &[SkeletonSequence]) -> Result<BTreeMap<String, f64>> {
    let gt_labels = frame_labels(data)?;
    let k = model.num_outputs();
    let mut preds: Vec<Vec<DetectionSegment>> = Vec::new();
    let mut gts = Vec::new();
    let (mut hit, mut total) = (0usize, 0usize);
    no_grad(|| -> Result<()> {
        for (seq, labels) in data.iter().zip(&gt_labels) {
            let probs = softmax_rows(&model.detect_frames(seq)?.to_f64_vec(), k);
            let cls: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let conf: Vec<f64> = probs.iter().zip(&cls).map(|(p, &c)| p[c]).collect();
            hit += cls.iter().zip(labels.iter()).filter(|(c, l)| **c == detection_label(**l)).count();
            total += cls.len();
            preds.push(frames_to_segments(&cls, &conf)?);
            gts.push(label_segments(labels)?);
        }
        Ok(())
    })?;
    let mut m = BTreeMap::new();
    for (name, mode) in [("map_a", ApMode::PerAction), ("map_v", ApMode::PerVideo)] {
        if let Some(v) = mean_average_precision(&preds, &gts, DETECTION_OVERLAP, mode)? {
            m.insert(name.to_string(), v);
        }
    }
    m.insert("frame_accuracy".to_string(), hit as f64 / total.max(1) as f64);
    Ok(m)
}

pub fn finetune_detection<F: Real>(
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    config: &ModelConfig,
    tc: &TrainConfig,
    from: Option<&Checkpoint>,
) -> Result<DetectionRun<F>> {
    tc.validate()?;
    check_lengths(train)?;
    let labels = frame_labels(train)?;
    let max_label = labels.iter().chain(frame_labels(test)?.iter()).flat_map(|l| l.iter()).copied().max().unwrap_or(-1);
    let num_actions = usize::try_from(max_label + 1).unwrap_or(0).max(1);
    let mut init = rng::stream(tc.seed, rng::INIT);
    let encoder = init_encoder(config, from, &mut init)?;
    let mut model = DetectionModel::new(encoder, num_actions, &mut init)?;
    let mut sampling = rng::stream(tc.seed, rng::SAMPLING);
    let seq_labels: Vec<usize> = train.iter().map(|s| s.label().unwrap_or(0)).collect();
    let subset = label_subset(&seq_labels, tc.label_fraction, tc.stratified, &mut sampling)?;
    let mut opt = Adam::new(tc.adam(), &model);
    let mut curve = Vec::new();
    for step in 1..=tc.steps {
        let idx = draw_batch(&subset, tc.batch_size, &mut sampling);
        let batch: Vec<&SkeletonSequence> = idx.iter().map(|&i| &train[i]).collect();
        let mut frames = Vec::new();
        let mut y = Vec::new();
        for &i in &idx {
            let t = train[i].num_frames();
            let fs: Vec<usize> = index::sample(&mut sampling, t, tc.frames_per_sequence.min(t)).into_vec();
            y.extend(fs.iter().map(|&f| detection_label(labels[i][f])));
            frames.push(fs);
        }
        let loss = cross_entropy(&model.frame_logits(&batch, &frames)?, &y)?;
        finite_or_abort(&loss, step)?;
        loss.backward()?;
        drop(loss);
        opt.step(&mut model)?;
        if tc.eval_every > 0 && step % tc.eval_every == 0 {
            curve.push((step, evaluate_detection(&model, test)?.get("map_v").copied().unwrap_or(0.0)));
        }
    }
    let metrics = evaluate_detection(&model, test)?;
    Ok(DetectionRun { model, report: FinetuneReport { task: Task::Detection, metrics, curve, train_size: subset.len(), steps: tc.steps, scores: Vec::new() } })
}

pub struct MotionRun<F: Real> {
    pub model: MotionModel<F>,
    pub report: FinetuneReport,
}

/// MPJPE of the model and of the constant-pose baseline, both from frame 0.
pub fn evaluate_motion<F: Real>(model: &MotionModel<F>, data: &[SkeletonSequence], task: &MotionTask) -> Result<BTreeMap<String, f64>> {
    let (mut ours, mut base) = (Vec::new(), Vec::new());
    no_grad(|| -> Result<()> {
        for chunk in data.chunks(EVAL_BATCH) {
            let mut obs = Vec::new();
            let mut fut: Vec<Vec<Point>> = Vec::new();
            for s in chunk {
                let (o, f) = task.split(s, 0)?;
                obs.push(o);
                fut.push(f);
            }
            let refs: Vec<&SkeletonSequence> = obs.iter().collect();
            let pred = model.predict(&refs, task.predict_frames)?.to_f64_vec();
            let per = pred.len() / chunk.len();
            for (i, f) in fut.iter().enumerate() {
                let p: Vec<Point> = pred[i * per..(i + 1) * per].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                ours.push(mpjpe(&p, f)?);
                base.push(mpjpe(&constant_pose(&obs[i], task.predict_frames), f)?);
            }
        }
        Ok(())
    })?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(BTreeMap::from([("mpjpe_mm".to_string(), mean(&ours)), ("baseline_mpjpe_mm".to_string(), mean(&base))]))
}

pub fn motion_task_for(tc: &TrainConfig, fps: f64) -> Result<MotionTask> {
    let mut t = MotionTask::at_fps(fps)?;
    if tc.observe_frames > 0 {
        t.observe_frames = tc.observe_frames;
    }
    if tc.predict_frames > 0 {
        t.predict_frames = tc.predict_frames;
    }
    MotionTask::new(t.observe_frames, t.predict_frames)
}

pub fn finetune_motion<F: Real>(
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    config: &ModelConfig,
    tc: &TrainConfig,
    from: Option<&Checkpoint>,
) -> Result<MotionRun<F>> {
    tc.validate()?;
    let first = train.first().ok_or_else(|| Error::Argument("no training sequences".into()))?;
    let task = motion_task_for(tc, first.fps())?;
    for s in train.iter().chain(test) {
        task.check(s.num_frames())?;
    }
    let j = first.num_joints();
    let mut init = rng::stream(tc.seed, rng::INIT);
    let encoder = init_encoder(config, from, &mut init)?;
    let mut model = MotionModel::new(encoder, tc.decoder, tc.decoder_hidden, j, &mut init)?;
    let mut sampling = rng::stream(tc.seed, rng::SAMPLING);
    let labels: Vec<usize> = train.iter().map(|s| s.label().unwrap_or(0)).collect();
    let subset = label_subset(&labels, tc.label_fraction, tc.stratified, &mut sampling)?;
    let mut opt = Adam::new(tc.adam(), &model);
    let mut curve = Vec::new();
    for step in 1..=tc.steps {
        let idx = draw_batch(&subset, tc.batch_size, &mut sampling);
        let mut obs = Vec::new();
        let mut fut = Vec::new();
        for &i in &idx {
            let start = sampling.random_range(0..=train[i].num_frames() - task.total());
            let (o, f) = task.split(&train[i], start)?;
            obs.push(o);
            fut.extend(f.into_iter().flatten());
        }
        let refs: Vec<&SkeletonSequence> = obs.iter().collect();
        let pred = model.predict(&refs, task.predict_frames)?;
        let gt = Tensor::new(pred.shape(), fut.into_iter().map(F::lit).collect())?;
        let loss = euclidean_loss(&pred, &gt)?;
        finite_or_abort(&loss, step)?;
        loss.backward()?;
        drop(loss);
        opt.step(&mut model)?;
        if tc.eval_every > 0 && step % tc.eval_every == 0 {
            curve.push((step, evaluate_motion(&model, test, &task)?["mpjpe_mm"]));
        }
    }
    let metrics = evaluate_motion(&model, test, &task)?;
    Ok(MotionRun { model, report: FinetuneReport { task: Task::Motion, metrics, curve, train_size: subset.len(), steps: tc.steps, scores: Vec::new() } })
}
