//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p hiskel-core --test acceptance -- --nocapture` to
//! see the lines; the heavy training criteria dominate the runtime.

use std::sync::OnceLock;
use std::time::Instant;

use hiskel_autodiff::gradcheck::{max_relative_error, numeric_gradient};
use hiskel_autodiff::{no_grad, Mask, Tensor64 as T};
use hiskel_core::checkpoint::Checkpoint;
use hiskel_core::data::{
    generate_synthetic, root_velocity, CoordBox, Layout, MotionClass, Nuisance, Side, SkeletonSequence, SyntheticSpec,
};
use hiskel_core::downstream::{mean_average_precision, mpjpe, ApMode, DetectionSegment};
use hiskel_core::encoder::{clip_attention_mask, ModelConfig};
use hiskel_core::pretext::{corrupt_spatial, discriminative_loss, info_nce, mask_count, spatial_loss, temporal_loss, CorruptionMode, Levels};
use hiskel_core::rng;
use hiskel_core::train::{
    finetune_detection, finetune_motion, finetune_recognition, motion_task_for, PretrainSession, TrainConfig,
};
use hiskel_core::Encoder64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- 1: gradients ---------------------------------------------------------

/// Worst relative error of `d/dx sum(w ⊙ f(x))` over all inputs.
fn op_error(inputs: &[(Vec<usize>, Vec<f64>)], f: &dyn Fn(&[T]) -> T, rng: &mut ChaCha8Rng) -> f64 {
    let leaves: Vec<T> = inputs.iter().map(|(s, d)| T::leaf(s, d.clone()).unwrap()).collect();
    let out = f(&leaves);
    let w = T::new(out.shape(), uniform(rng, out.numel(), -1.0, 1.0)).unwrap();
    let objective = |xs: &[T]| f(xs).mul(&w).unwrap().sum();
    objective(&leaves).backward().unwrap();
    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let numeric = numeric_gradient(
            |x| {
                let xs: Vec<T> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (s, d))| T::new(s, if j == i { x.to_vec() } else { d.clone() }).unwrap())
                    .collect();
                objective(&xs).item()
            },
            &inputs[i].1,
            1e-5,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
    }
    worst
}

type OpCase = (&'static str, Vec<(Vec<usize>, Vec<f64>)>, Box<dyn Fn(&[T]) -> T>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let (r, d) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let n = r * d;
    let a = uniform(rng, n, -2.0, 2.0);
    let b = uniform(rng, n, -2.0, 2.0);
    let pos = uniform(rng, n, 0.2, 3.0);
    let away: Vec<f64> = a.iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect();
    let inside: Vec<f64> = a.iter().map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.5 } else { *v }).collect();
    let m = vec![r, d];
    let one = |data: Vec<f64>| vec![(m.clone(), data)];
    let two = vec![(m.clone(), a.clone()), (m.clone(), b.clone())];
    let k = rng.random_range(1..=5);
    let rhs = uniform(rng, d * k, -1.0, 1.0);
    let rows: Vec<usize> = (0..5).map(|_| rng.random_range(0..r)).collect();
    let picks: Vec<usize> = (0..r).map(|_| rng.random_range(0..d)).collect();
    let keep: Vec<bool> = (0..d * d).map(|i| i % d == i / d || rng.random_bool(0.6)).collect();
    let mask = Mask::new(&[d, d], keep).unwrap();
    let cube = vec![2, r, d];
    let cube_data = uniform(rng, 2 * n, -2.0, 2.0);
    let sq = uniform(rng, 2 * d * d, -2.0, 2.0);
    vec![
        ("add", two.clone(), Box::new(|x: &[T]| x[0].add(&x[1]).unwrap())),
        ("sub", two.clone(), Box::new(|x: &[T]| x[0].sub(&x[1]).unwrap())),
        ("mul", two.clone(), Box::new(|x: &[T]| x[0].mul(&x[1]).unwrap())),
        ("add_broadcast", vec![(m.clone(), a.clone()), (vec![d], b[..d].to_vec())], Box::new(|x: &[T]| x[0].add_broadcast(&x[1]).unwrap())),
        ("scale", one(a.clone()), Box::new(|x: &[T]| x[0].scale(-1.7))),
        ("neg", one(a.clone()), Box::new(|x: &[T]| x[0].neg())),
        ("add_scalar", one(a.clone()), Box::new(|x: &[T]| x[0].add_scalar(0.3))),
        ("gelu", one(a.clone()), Box::new(|x: &[T]| x[0].gelu())),
        ("sigmoid", one(a.clone()), Box::new(|x: &[T]| x[0].sigmoid())),
        ("tanh", one(a.clone()), Box::new(|x: &[T]| x[0].tanh())),
        ("exp", one(a.clone()), Box::new(|x: &[T]| x[0].exp())),
        ("ln", one(pos.clone()), Box::new(|x: &[T]| x[0].ln())),
        ("sqrt", one(pos.clone()), Box::new(|x: &[T]| x[0].sqrt())),
        ("square", one(a.clone()), Box::new(|x: &[T]| x[0].square())),
        ("abs", one(away), Box::new(|x: &[T]| x[0].abs())),
        ("clamp", one(inside), Box::new(|x: &[T]| x[0].clamp(-1.0, 1.0))),
        ("matmul", vec![(m.clone(), a.clone()), (vec![d, k], rhs.clone())], Box::new(|x: &[T]| x[0].matmul(&x[1]).unwrap())),
        ("matmul_nt", vec![(m.clone(), a.clone()), (vec![k, d], rhs)], Box::new(|x: &[T]| x[0].matmul_nt(&x[1]).unwrap())),
        ("reshape", one(a.clone()), Box::new(move |x: &[T]| x[0].reshape(&[n]).unwrap())),
        ("permute", vec![(cube.clone(), cube_data.clone())], Box::new(|x: &[T]| x[0].permute(&[2, 0, 1]).unwrap())),
        ("transpose_last", one(a.clone()), Box::new(|x: &[T]| x[0].transpose_last().unwrap())),
        ("select_rows", one(a.clone()), Box::new(move |x: &[T]| x[0].select_rows(&rows).unwrap())),
        ("narrow_rows", one(a.clone()), Box::new(move |x: &[T]| x[0].narrow_rows(1, r - 1).unwrap())),
        ("cat", two.clone(), Box::new(|x: &[T]| T::cat(&[x[0].clone(), x[1].clone()], 1).unwrap())),
        ("stack", two.clone(), Box::new(|x: &[T]| T::stack(&[x[0].clone(), x[1].clone()]).unwrap())),
        ("sum", one(a.clone()), Box::new(|x: &[T]| x[0].sum())),
        ("mean", one(a.clone()), Box::new(|x: &[T]| x[0].mean())),
        ("sum_last", one(a.clone()), Box::new(|x: &[T]| x[0].sum_last().unwrap())),
        ("mean_last", one(a.clone()), Box::new(|x: &[T]| x[0].mean_last().unwrap())),
        ("softmax", one(a.clone()), Box::new(|x: &[T]| x[0].softmax().unwrap())),
        ("log_softmax", one(a.clone()), Box::new(|x: &[T]| x[0].log_softmax().unwrap())),
        ("masked_softmax", vec![(vec![2, d, d], sq)], Box::new(move |x: &[T]| x[0].masked_softmax(Some(&mask)).unwrap())),
        (
            "layer_norm",
            vec![(m.clone(), a.clone()), (vec![d], uniform(rng, d, 0.5, 1.5)), (vec![d], uniform(rng, d, -0.5, 0.5))],
            Box::new(|x: &[T]| x[0].layer_norm(&x[1], &x[2], 1e-5).unwrap()),
        ),
        ("l2_normalize_last", one(a.clone()), Box::new(|x: &[T]| x[0].l2_normalize_last(1e-12).unwrap())),
        ("pick_last", one(a), Box::new(move |x: &[T]| x[0].pick_last(&picks).unwrap())),
    ]
}

fn tiny() -> ModelConfig {
    ModelConfig::tiny()
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_op = (0.0, "");
    for _ in 0..3 {
        for (name, inputs, f) in op_cases(&mut rng) {
            let e = op_error(&inputs, f.as_ref(), &mut rng);
            if e > worst_op.0 {
                worst_op = (e, name);
            }
        }
    }

    // End to end: sum(w ⊙ video embedding) against the input coordinates.
    let (t, j) = (12, 4);
    let enc = Encoder64::new(tiny(), &mut rng::stream(7, rng::INIT)).unwrap();
    let coords = uniform(&mut rng, t * j * 3, -1.0, 1.0);
    let w = T::new(&[1, tiny().dim_v], uniform(&mut rng, tiny().dim_v, -1.0, 1.0)).unwrap();
    let f = |x: &T| enc.encode_coords(x).unwrap().video.mul(&w).unwrap().sum();
    let leaf = T::leaf(&[1, t, j, 3], coords.clone()).unwrap();
    f(&leaf).backward().unwrap();
    let analytic = leaf.grad().unwrap();
    let numeric = numeric_gradient(|x| no_grad(|| f(&T::new(&[1, t, j, 3], x.to_vec()).unwrap()).item()), &coords, 1e-5);
    let e2e = max_relative_error(&analytic, &numeric, 1e-6);

    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient suite",
        worst_op.0 <= 1e-4 && e2e <= 1e-3 && secs < 60.0,
        format!("worst op {} {:.2e}, end-to-end {e2e:.2e}, {secs:.1}s", worst_op.1, worst_op.0),
    );
}

// ---- 2: clip mask -----------------------------------------------------------

#[test]
fn criterion_02_mask_invariant() {
    let cfg = ModelConfig { layers: 2, ..tiny() };
    let enc = Encoder64::new(cfg.clone(), &mut rng::stream(2, rng::INIT)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut leaks, mut worst_row, mut checked) = (0usize, 0.0f64, 0usize);
    for _ in 0..100 {
        let width = rng.random_range(1..=cfg.window);
        let joints = rng.random_range(2..=6);
        let clip = T::new(&[1, width * joints, cfg.dim_f], uniform(&mut rng, width * joints * cfg.dim_f, -2.0, 2.0)).unwrap();
        let out = enc.ctrs_forward(&clip, width, joints).unwrap();
        let mask = clip_attention_mask(width, joints);
        let l = 1 + width * joints;
        for layer in &out.attention {
            let a = layer.to_f64_vec();
            for (h, head) in a.chunks(l * l).enumerate() {
                for (row, weights) in head.chunks(l).enumerate() {
                    worst_row = worst_row.max((weights.iter().sum::<f64>() - 1.0).abs());
                    for (col, &w) in weights.iter().enumerate() {
                        if !mask.keeps(row * l + col) {
                            checked += 1;
                            if w != 0.0 {
                                leaks += 1;
                                eprintln!("head {h} ({row},{col}) = {w:e}");
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(
        2,
        "mask invariant",
        leaks == 0 && checked > 0 && worst_row <= 1e-9,
        format!("{checked} masked weights, {leaks} nonzero, worst row-sum error {worst_row:.1e}"),
    );
}

// ---- 3: corruption statistics -----------------------------------------------

#[test]
fn criterion_03_corruption_statistics() {
    let spec = SyntheticSpec {
        classes: vec![MotionClass::Circle { clockwise: true }, MotionClass::Wave { side: Side::Left }],
        n_per_class: 40,
        num_frames: 24,
        num_joints: 9,
        fps: 30.0,
        noise_std: 0.01,
        seed: 3,
        layout: Layout::Trimmed,
        nuisance: Nuisance::default(),
    };
    let data = generate_synthetic(&spec).unwrap();
    let bounds = CoordBox::of(&data).unwrap();
    let mut rng = rng::stream(3, rng::CORRUPTION);
    let mut counts = [0usize; 3];
    let mut exact = true;
    let mut unchanged_ok = true;
    while counts.iter().sum::<usize>() < 10_000 {
        for seq in &data {
            let rec = corrupt_spatial(seq, &bounds, &mut rng).unwrap();
            exact &= rec.mask_set.len() == mask_count(seq.num_frames(), seq.num_joints());
            exact &= rec.mask_set.len() == (0.15 * (seq.num_frames() * seq.num_joints()) as f64).round() as usize;
            for (k, mode) in rec.modes.iter().enumerate() {
                let (t, j) = rec.mask_set[k];
                counts[match mode {
                    CorruptionMode::RandomCoord => 0,
                    CorruptionMode::SwappedCoord => 1,
                    CorruptionMode::Unchanged => {
                        unchanged_ok &= rec.corrupted.joint(t, j) == seq.joint(t, j);
                        2
                    }
                }] += 1;
            }
        }
    }
    let total = counts.iter().sum::<usize>() as f64;
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let within = freq.iter().zip([0.8, 0.1, 0.1]).all(|(f, p)| (f - p).abs() <= 0.02);
    verdict(
        3,
        "corruption statistics",
        exact && unchanged_ok && within,
        format!("{total} entries, frequencies {:.4}/{:.4}/{:.4}, |M| exact: {exact}", freq[0], freq[1], freq[2]),
    );
}

// ---- 4: loss oracles ----------------------------------------------------------

#[test]
fn criterion_04_loss_oracles() {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let good = (got - want).abs() <= tol;
        ok &= good;
        notes.push(format!("{name} {got:.12}"));
    };
    // Spatial: residual (0.1, -0.2, 0.3); then two joints with L1 norms 0.6 and 0.2.
    let pred = T::new(&[1, 3], vec![0.1, -0.2, 0.3]).unwrap();
    check("L1 single", spatial_loss(&pred, &T::zeros(&[1, 3]).unwrap()).unwrap().item(), 0.6, 1e-15);
    let pred = T::new(&[2, 3], vec![0.1, -0.2, 0.3, 0.0, 0.2, 0.0]).unwrap();
    check("L1 mean", spatial_loss(&pred, &T::zeros(&[2, 3]).unwrap()).unwrap().item(), 0.4, 1e-15);

    let half = T::new(&[1], vec![0.5]).unwrap();
    check("order at 0.5", temporal_loss(&half, &half).unwrap().item(), 2.0 * std::f64::consts::LN_2, 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one = T::new(&[1, 6], uniform(&mut rng, 6, -1.0, 1.0)).unwrap();
    let other = T::new(&[1, 6], uniform(&mut rng, 6, -1.0, 1.0)).unwrap();
    check("InfoNCE B=1", info_nce(&one, &other, 0.07, true).unwrap().item(), 0.0, 1e-9);
    // Mutually orthogonal targets and a prediction orthogonal to all of them.
    let b = 5;
    let mut targets = vec![0.0; b * (b + 1)];
    for i in 0..b {
        targets[i * (b + 1) + i] = 1.0 + i as f64;
    }
    let mut preds = vec![0.0; b * (b + 1)];
    for i in 0..b {
        preds[i * (b + 1) + b] = 2.0;
    }
    let (p, t) = (T::new(&[b, b + 1], preds).unwrap(), T::new(&[b, b + 1], targets).unwrap());
    check("InfoNCE uniform", info_nce(&p, &t, 0.07, true).unwrap().item(), (b as f64).ln(), 1e-9);
    ok &= discriminative_loss(&one, &other, 0.07, true).is_err();
    verdict(4, "loss oracles", ok, notes.join(", "));
}

// ---- 7: detection ------------------------------------------------------------

fn seg(s: usize, e: usize, c: usize, score: f64) -> DetectionSegment {
    DetectionSegment::new(s, e, c, score).unwrap()
}

fn oracle_iou(a: &DetectionSegment, b: &DetectionSegment) -> f64 {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    let inter = hi.saturating_sub(lo) as f64;
    inter / ((a.end_frame - a.start_frame) as f64 + (b.end_frame - b.start_frame) as f64 - inter)
}

/// Every one-to-one assignment of `preds` (sorted by descending score) to
/// `gt`; returns the lexicographically largest true-positive vector.
fn best_flags(preds: &[DetectionSegment], gt: &[DetectionSegment], overlap: f64) -> Vec<bool> {
    fn go(k: usize, preds: &[DetectionSegment], gt: &[DetectionSegment], overlap: f64, used: &mut Vec<bool>, cur: &mut Vec<bool>, best: &mut Vec<bool>) {
        if k == preds.len() {
            if *cur > *best {
                *best = cur.clone();
            }
            return;
        }
        for g in 0..gt.len() {
            if !used[g] && gt[g].class_id == preds[k].class_id && oracle_iou(&preds[k], &gt[g]) >= overlap {
                used[g] = true;
                cur.push(true);
                go(k + 1, preds, gt, overlap, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
        cur.push(false);
        go(k + 1, preds, gt, overlap, used, cur, best);
        cur.pop();
    }
    let mut best = vec![false; preds.len()];
    go(0, preds, gt, overlap, &mut vec![false; gt.len()], &mut Vec::new(), &mut best);
    best
}

fn oracle_ap(ranked: &[bool], num_gt: usize) -> f64 {
    let prec: Vec<f64> = (0..ranked.len()).map(|k| ranked[..=k].iter().filter(|&&t| t).count() as f64 / (k + 1) as f64).collect();
    let mut sum = 0.0;
    for k in 0..ranked.len() {
        if ranked[k] {
            sum += prec[k..].iter().cloned().fold(f64::MIN, f64::max);
        }
    }
    sum / num_gt as f64
}

fn oracle_map(pred: &[Vec<DetectionSegment>], gt: &[Vec<DetectionSegment>], overlap: f64, mode: ApMode) -> Option<f64> {
    // (video, score, tp) for every prediction
    let mut scored: Vec<(usize, DetectionSegment, bool)> = Vec::new();
    for (v, (p, g)) in pred.iter().zip(gt).enumerate() {
        let mut p = p.clone();
        p.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let classes: std::collections::BTreeSet<usize> = p.iter().map(|s| s.class_id).collect();
        for c in classes {
            let pc: Vec<DetectionSegment> = p.iter().copied().filter(|s| s.class_id == c).collect();
            let gc: Vec<DetectionSegment> = g.iter().copied().filter(|s| s.class_id == c).collect();
            for (s, t) in pc.iter().zip(best_flags(&pc, &gc, overlap)) {
                scored.push((v, *s, t));
            }
        }
    }
    scored.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let units: Vec<(Box<dyn Fn(&(usize, DetectionSegment, bool)) -> bool>, usize)> = match mode {
        ApMode::PerVideo => (0..gt.len())
            .filter(|&v| !gt[v].is_empty())
            .map(|v| (Box::new(move |x: &(usize, DetectionSegment, bool)| x.0 == v) as Box<dyn Fn(&_) -> bool>, gt[v].len()))
            .collect(),
        ApMode::PerAction => {
            let classes: std::collections::BTreeSet<usize> = gt.iter().flatten().map(|s| s.class_id).collect();
            classes
                .into_iter()
                .map(|c| {
                    let n = gt.iter().flatten().filter(|s| s.class_id == c).count();
                    (Box::new(move |x: &(usize, DetectionSegment, bool)| x.1.class_id == c) as Box<dyn Fn(&_) -> bool>, n)
                })
                .collect()
        }
    };
    if units.is_empty() {
        return None;
    }
    let aps: Vec<f64> = units
        .iter()
        .map(|(keep, n)| oracle_ap(&scored.iter().filter(|x| keep(x)).map(|x| x.2).collect::<Vec<_>>(), *n))
        .collect();
    Some(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn random_segments(rng: &mut ChaCha8Rng, max: usize, scored: bool) -> Vec<DetectionSegment> {
    (0..rng.random_range(0..=max))
        .map(|_| {
            let s = rng.random_range(0..20);
            let e = s + rng.random_range(1..8);
            seg(s, e, rng.random_range(1..=2), if scored { rng.random_range(0.0..1.0) } else { 1.0 })
        })
        .collect()
}

fn detection_data(seed: u64, n: usize) -> Vec<SkeletonSequence> {
    let spec = SyntheticSpec {
        classes: vec![MotionClass::Raise, MotionClass::Circle { clockwise: true }],
        n_per_class: n,
        num_frames: 48,
        num_joints: 9,
        fps: 15.0,
        noise_std: 0.005,
        seed,
        layout: Layout::Untrimmed { segments: 1, min_len: 14, max_len: 20, min_gap: 4 },
        nuisance: Nuisance::default(),
    };
    generate_synthetic(&spec).unwrap()
}

#[test]
fn criterion_07_toy_detection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let videos = rng.random_range(1..=3);
        let gt: Vec<Vec<DetectionSegment>> = (0..videos).map(|_| random_segments(&mut rng, 4, false)).collect();
        let pred: Vec<Vec<DetectionSegment>> = (0..videos).map(|_| random_segments(&mut rng, 4, true)).collect();
        for mode in [ApMode::PerAction, ApMode::PerVideo] {
            let overlap = [0.1, 0.3, 0.5, 0.7][rng.random_range(0..4)];
            if mean_average_precision(&pred, &gt, overlap, mode).unwrap() != oracle_map(&pred, &gt, overlap, mode) {
                mismatches += 1;
            }
        }
    }

    let train = detection_data(70, 40);
    let test = detection_data(71, 10);
    let mut tc = TrainConfig::finetune();
    tc.steps = DETECTION_STEPS;
    tc.seed = 7;
    let run = finetune_detection::<f32>(&train, &test, &toy_config(), &tc, None).unwrap();
    let map_v = run.report.metric("map_v").unwrap_or(0.0);
    verdict(
        7,
        "toy detection",
        mismatches == 0 && map_v >= 0.9,
        format!("oracle mismatches {mismatches}/400, mAP_v {map_v:.3}, mAP_a {:.3}", run.report.metric("map_a").unwrap_or(0.0)),
    );
}

// ---- shared toy setup ---------------------------------------------------------

/// Small widths need a larger init scale than the default 0.02, or the
/// [CLS] outputs start out nearly input-independent.
fn toy_config() -> ModelConfig {
    ModelConfig { layers: 2, heads: 2, d_k: 8, dim_f: 16, dim_c: 32, dim_v: 64, window: 4, stride: 2, init_std: 0.1, ..ModelConfig::default() }
}

const DETECTION_STEPS: u64 = 600;
const TOY_PRETRAIN_STEPS: u64 = 200;
const TOY_FINETUNE_STEPS: u64 = 200;
const SEEDS: u64 = 5;

// ---- 5: overfit -----------------------------------------------------------------

#[test]
fn criterion_05_overfit() {
    let spec = SyntheticSpec {
        classes: vec![
            MotionClass::Circle { clockwise: true },
            MotionClass::Circle { clockwise: false },
            MotionClass::Wave { side: Side::Left },
            MotionClass::Wave { side: Side::Right },
            MotionClass::Raise,
            MotionClass::Lower,
            MotionClass::Translate { min_speed: 0.5, max_speed: 1.0 },
            MotionClass::Idle,
        ],
        n_per_class: 1,
        num_frames: 16,
        num_joints: 9,
        fps: 10.0,
        noise_std: 0.0,
        seed: 0,
        layout: Layout::Trimmed,
        nuisance: Nuisance::default(),
    };
    let data = generate_synthetic(&spec).unwrap();
    let mut tc = TrainConfig::pretrain();
    tc.seed = 0;
    tc.freeze_batch = true;
    let budget = 600.0;
    let start = Instant::now();
    let mut session = PretrainSession::<f32>::new(&data, ModelConfig::default(), tc).unwrap();
    let first = session.step().unwrap().losses;
    let (mut best, mut last, mut steps) = (first.total, first, 1);
    while steps < 500 && best > 0.2 * first.total && start.elapsed().as_secs_f64() < budget {
        last = session.step().unwrap().losses;
        best = best.min(last.total);
        steps += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let drop = 1.0 - best / first.total;
    let parts = |l: &hiskel_core::pretext::LossValues| {
        l.components().iter().filter_map(|(n, v)| v.map(|v| format!("{n} {v:.3}"))).collect::<Vec<_>>().join(" ")
    };
    verdict(
        5,
        "overfit",
        drop >= 0.8 && secs < budget,
        format!(
            "L_H {:.3} -> {best:.3} ({:.0}% drop) in {steps} steps, {secs:.0}s; first [{}] last [{}]",
            first.total,
            100.0 * drop,
            parts(&first),
            parts(&last)
        ),
    );
}

// ---- 6 and 9: toy recognition -------------------------------------------------

fn recognition_data(seed: u64, n: usize) -> Vec<SkeletonSequence> {
    let spec = SyntheticSpec {
        classes: vec![MotionClass::Wave { side: Side::Left }, MotionClass::Wave { side: Side::Right }],
        n_per_class: n,
        num_frames: 16,
        num_joints: 9,
        fps: 10.0,
        noise_std: 0.01,
        seed,
        layout: Layout::Trimmed,
        nuisance: Nuisance::default(),
    };
    generate_synthetic(&spec).unwrap()
}

/// Test accuracies of one seed.
struct ToySeed {
    /// 10% labels; random init, then pre-trained with F, C, V and F+C+V.
    few: [f64; 5],
    /// All labels, pre-trained with F+C+V.
    full: f64,
}

fn toy_pretrain(data: &[SkeletonSequence], levels: Levels, seed: u64) -> Checkpoint {
    let mut tc = TrainConfig::pretrain();
    tc.seed = seed;
    tc.levels = levels;
    tc.steps = TOY_PRETRAIN_STEPS;
    hiskel_core::train::pretrain::<f32>(data, toy_config(), tc, |_, _| Ok(())).unwrap()
}

fn toy_accuracy(train: &[SkeletonSequence], test: &[SkeletonSequence], fraction: f64, seed: u64, from: Option<&Checkpoint>) -> f64 {
    let mut tc = TrainConfig::finetune();
    tc.seed = seed;
    tc.steps = TOY_FINETUNE_STEPS;
    tc.label_fraction = fraction;
    finetune_recognition::<f32>(train, test, &toy_config(), &tc, from).unwrap().report.metric("top1").unwrap()
}

/// Shared by criteria 6 and 9, computed once per test binary.
fn toy_recognition() -> &'static [ToySeed] {
    static RUNS: OnceLock<Vec<ToySeed>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let train = recognition_data(60, 100);
        let test = recognition_data(61, 50);
        (0..SEEDS)
            .map(|seed| {
                let mut few = [toy_accuracy(&train, &test, 0.1, seed, None), 0.0, 0.0, 0.0, 0.0];
                let mut full = 0.0;
                for (k, levels) in ["F", "C", "V", "F+C+V"].iter().enumerate() {
                    let ck = toy_pretrain(&train, levels.parse().unwrap(), seed);
                    few[k + 1] = toy_accuracy(&train, &test, 0.1, seed, Some(&ck));
                    if k == 3 {
                        full = toy_accuracy(&train, &test, 1.0, seed, Some(&ck));
                    }
                }
                eprintln!("toy recognition seed {seed}: 10% labels {few:?}, full labels {full}");
                ToySeed { few, full }
            })
            .collect()
    })
}

#[test]
fn criterion_06_toy_recognition() {
    let runs = toy_recognition();
    let full = median(runs.iter().map(|r| r.full).collect());
    let pretrained = median(runs.iter().map(|r| r.few[4]).collect());
    let random = median(runs.iter().map(|r| r.few[0]).collect());
    verdict(
        6,
        "toy recognition",
        full >= 0.95 && pretrained - random >= 0.05,
        format!("median accuracy: full labels {full:.3}; 10% labels pre-trained {pretrained:.3} vs random {random:.3}"),
    );
}

#[test]
fn criterion_09_ablation_monotonicity() {
    let runs = toy_recognition();
    let med: Vec<f64> = (0..5).map(|k| median(runs.iter().map(|r| r.few[k]).collect())).collect();
    let best_single = med[1].max(med[2]).max(med[3]);
    verdict(
        9,
        "ablation monotonicity",
        med[4] >= best_single && best_single >= med[0],
        format!("median accuracy at 10% labels: random {:.3}, F {:.3}, C {:.3}, V {:.3}, F+C+V {:.3}", med[0], med[1], med[2], med[3], med[4]),
    );
}

// ---- 8: motion ------------------------------------------------------------------

fn motion_data(seed: u64, n: usize) -> Vec<SkeletonSequence> {
    let spec = SyntheticSpec {
        classes: vec![MotionClass::Translate { min_speed: 0.5, max_speed: 1.0 }],
        n_per_class: n,
        num_frames: 24,
        num_joints: 9,
        fps: 10.0,
        noise_std: 0.0,
        seed,
        layout: Layout::Trimmed,
        nuisance: Nuisance::default(),
    };
    generate_synthetic(&spec).unwrap()
}

#[test]
fn criterion_08_toy_motion() {
    let cases = [
        mpjpe(&[[0.1, 0.2, 0.3]], &[[0.1, 0.2, 0.3]]).unwrap() == 0.0,
        (mpjpe(&[[0.001, 0.0, 0.0], [1.001, 2.0, 3.0]], &[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]).unwrap() - 1.0).abs() < 1e-9,
        (mpjpe(&[[0.003, 0.004, 0.0], [0.0, 0.0, 0.0]], &[[0.0; 3], [0.0; 3]]).unwrap() - 2.5).abs() < 1e-12,
    ];

    let train = motion_data(80, 64);
    let test = motion_data(81, 32);
    let task = motion_task_for(&TrainConfig::finetune(), 10.0).unwrap();
    // Holding the last observed pose misses by |v| * k at the k-th predicted frame.
    let analytic = test
        .iter()
        .map(|s| {
            let v = root_velocity(s);
            let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            1000.0 * speed * (task.predict_frames + 1) as f64 / 2.0
        })
        .sum::<f64>()
        / test.len() as f64;
    let mut ratios = Vec::new();
    let mut baseline = 0.0;
    for seed in 0..SEEDS {
        let mut tc = TrainConfig::finetune();
        tc.seed = seed;
        tc.steps = TOY_FINETUNE_STEPS;
        let run = finetune_motion::<f32>(&train, &test, &toy_config(), &tc, None).unwrap();
        baseline = run.report.metric("baseline_mpjpe_mm").unwrap();
        ratios.push(run.report.metric("mpjpe_mm").unwrap() / analytic);
    }
    let ratio = median(ratios);
    verdict(
        8,
        "toy motion",
        cases.iter().all(|&c| c) && ratio <= 0.7 && (baseline - analytic).abs() <= 1e-6 * analytic,
        format!("median MPJPE / baseline {ratio:.3} (baseline {analytic:.1} mm analytic, {baseline:.1} mm measured), unit cases {cases:?}"),
    );
}

// ---- 10: determinism and resume ---------------------------------------------------

fn parameter_bits(ck: &Checkpoint) -> Vec<u8> {
    let mut ck = ck.clone();
    ck.config_text.clear();
    ck.to_bytes()
}

#[test]
fn criterion_10_determinism() {
    let data = recognition_data(90, 4);
    let mut tc = TrainConfig::pretrain();
    tc.seed = 10;
    tc.batch_size = 4;
    let run = |steps: u64| {
        let mut s = PretrainSession::<f64>::new(&data, tiny(), tc.clone()).unwrap();
        let losses: Vec<u64> = (0..steps).map(|_| s.step().unwrap().losses.total.to_bits()).collect();
        (s.checkpoint(), losses)
    };
    let (a, la) = run(200);
    let (b, lb) = run(200);
    let identical = la == lb && a.to_bytes() == b.to_bytes();

    let (half, _) = run(100);
    let path = std::env::temp_dir().join(format!("hiskel-acceptance-{}.ckpt", std::process::id()));
    half.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let mut resumed = PretrainSession::<f64>::resume(&data, &loaded).unwrap();
    let rest: Vec<u64> = (0..100).map(|_| resumed.step().unwrap().losses.total.to_bits()).collect();
    let resumed_ck = resumed.checkpoint();
    let resume_ok = rest == la[100..] && parameter_bits(&resumed_ck) == parameter_bits(&a);

    let test = recognition_data(91, 4);
    let mut ft = TrainConfig::finetune();
    ft.steps = 20;
    ft.batch_size = 4;
    let metric = || finetune_recognition::<f64>(&data, &test, &tiny(), &ft, Some(&a)).unwrap().report;
    let (m1, m2) = (metric(), metric());
    let metrics_ok = m1.metric("top1").map(f64::to_bits) == m2.metric("top1").map(f64::to_bits) && m1.scores == m2.scores;

    verdict(
        10,
        "determinism and resume",
        identical && resume_ok && metrics_ok,
        format!("repeat run identical: {identical}, 200 = 100 + save/load + 100: {resume_ok}, fine-tune metrics identical: {metrics_ok}"),
    );
}
