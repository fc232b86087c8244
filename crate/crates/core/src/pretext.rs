//! Self-supervised objectives: masked-joint regression on the frame stage,
//! order verification on the clip and video stages, and future-clip
//! prediction with an in-batch contrastive loss.

use std::fmt;
use std::str::FromStr;

use hiskel_autodiff::{Parameter, Real, Tensor};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClipSet, CoordBox, Point, SkeletonSequence};
use crate::encoder::{coords_tensor, HierarchicalEncoder, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};

pub const MASK_RATIO: f64 = 0.15;
pub const P_RANDOM: f64 = 0.8;
pub const P_SWAPPED: f64 = 0.1;
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionMode {
    RandomCoord,
    SwappedCoord,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub corrupted: SkeletonSequence,
    /// `(frame, joint)` cells, unique.
    pub mask_set: Vec<(usize, usize)>,
    pub originals: Vec<Point>,
    pub modes: Vec<CorruptionMode>,
}

/// `round(0.15 * T * J)`
pub fn mask_count(num_frames: usize, num_joints: usize) -> usize {
    (MASK_RATIO * (num_frames * num_joints) as f64).round() as usize
}

pub fn corrupt_spatial(seq: &SkeletonSequence, bounds: &CoordBox, rng: &mut ChaCha8Rng) -> Result<CorruptionRecord> {
    let (t, j) = (seq.num_frames(), seq.num_joints());
    let cells = t * j;
    let count = mask_count(t, j);
    if count == 0 {
        return Err(Error::InsufficientLength { what: "joint cells for masking", needed: 4, got: cells });
    }
    let mut points = seq.points().to_vec();
    let mut mask_set = Vec::with_capacity(count);
    let mut originals = Vec::with_capacity(count);
    let mut modes = Vec::with_capacity(count);
    for cell in index::sample(rng, cells, count) {
        let u: f64 = rng.random();
        let mode = if u < P_RANDOM {
            CorruptionMode::RandomCoord
        } else if u < P_RANDOM + P_SWAPPED {
            CorruptionMode::SwappedCoord
        } else {
            CorruptionMode::Unchanged
        };
        points[cell] = match mode {
            CorruptionMode::RandomCoord => {
                let mut p = [0.0; 3];
                for (k, v) in p.iter_mut().enumerate() {
                    let (lo, hi) = (bounds.lo[k], bounds.hi[k]);
                    *v = if hi > lo { rng.random_range(lo..hi) } else { lo };
                }
                p
            }
            CorruptionMode::SwappedCoord => {
                let mut other = rng.random_range(0..cells - 1);
                if other >= cell {
                    other += 1;
                }
                seq.points()[other]
            }
            CorruptionMode::Unchanged => seq.points()[cell],
        };
        mask_set.push((cell / j, cell % j));
        originals.push(seq.points()[cell]);
        modes.push(mode);
    }
    Ok(CorruptionRecord { corrupted: seq.with_points(points)?, mask_set, originals, modes })
}

/// Mean over masked entries of the L1 norm of the coordinate residual;
/// both inputs `[M, 3]`.
pub fn spatial_loss<F: Real>(pred: &Tensor<F>, originals: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(pred.sub(originals)?.abs().sum_last()?.mean())
}

/// A sequence of elements and a copy with two of them exchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedPair<T> {
    pub positive: Vec<T>,
    pub negative: Vec<T>,
    pub swap_indices: (usize, usize),
    /// First source frame of the positive crop (0 for clip sequences).
    pub offset: usize,
}

/// Two distinct indices below `n`, uniformly.
pub fn draw_swap(n: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::InsufficientLength { what: "elements to swap", needed: 2, got: n });
    }
    let i = rng.random_range(0..n);
    let mut k = rng.random_range(0..n - 1);
    if k >= i {
        k += 1;
    }
    Ok((i, k))
}

fn swapped<T: Clone>(items: &[T], (i, k): (usize, usize)) -> Vec<T> {
    let mut out = items.to_vec();
    out.swap(i, k);
    out
}

/// Random contiguous crop of `width` frames and the same crop with two
/// frames exchanged. Elements are frames (`J` points each).
pub fn make_clip_pair(seq: &SkeletonSequence, width: usize, rng: &mut ChaCha8Rng) -> Result<PermutedPair<Vec<Point>>> {
    let (offset, swap) = draw_clip_pair(seq.num_frames(), width, rng)?;
    let positive: Vec<Vec<Point>> = (offset..offset + width).map(|t| seq.frame(t).to_vec()).collect();
    Ok(PermutedPair { negative: swapped(&positive, swap), positive, swap_indices: swap, offset })
}

/// Crop start and swap positions behind [`make_clip_pair`].
pub fn draw_clip_pair(num_frames: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<(usize, (usize, usize))> {
    if width < 2 {
        return Err(Error::InsufficientLength { what: "clip width for a frame swap", needed: 2, got: width });
    }
    if width > num_frames {
        return Err(Error::InsufficientLength { what: "frames for a crop", needed: width, got: num_frames });
    }
    let offset = rng.random_range(0..=num_frames - width);
    Ok((offset, draw_swap(width, rng)?))
}

/// Clip order with two clips exchanged. Elements are whole clips.
pub fn make_video_negative(clips: &ClipSet, rng: &mut ChaCha8Rng) -> Result<PermutedPair<Vec<Point>>> {
    let swap = draw_swap(clips.len(), rng)
        .map_err(|_| Error::InsufficientLength { what: "clips", needed: 2, got: clips.len() })?;
    let positive = clips.clips().to_vec();
    Ok(PermutedPair { negative: swapped(&positive, swap), positive, swap_indices: swap, offset: 0 })
}

/// `-(ln p_pos + ln(1 - p_neg))`, averaged over the batch, probabilities
/// clamped `1e-7` away from 0 and 1.
pub fn temporal_loss<F: Real>(p_pos: &Tensor<F>, p_neg: &Tensor<F>) -> Result<Tensor<F>> {
    let (lo, hi) = (F::lit(PROB_CLAMP), F::lit(1.0 - PROB_CLAMP));
    let pos = p_pos.clamp(lo, hi).ln();
    let neg = p_neg.clamp(lo, hi).neg().add_scalar(F::one()).ln();
    Ok(pos.add(&neg)?.mean().neg())
}

/// InfoNCE over a batch: row `i` of `pred` should match row `i` of
/// `target` against every other target row. With `normalize`, similarity is
/// cosine; otherwise the raw dot product.
pub fn info_nce<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, tau: f64, normalize: bool) -> Result<Tensor<F>> {
    if pred.shape() != target.shape() || pred.rank() != 2 {
        return Err(Error::Argument(format!("info_nce needs equal [B, D] inputs, got {:?} and {:?}", pred.shape(), target.shape())));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let (p, t) = if normalize {
        let eps = F::lit(1e-12);
        (pred.l2_normalize_last(eps)?, target.l2_normalize_last(eps)?)
    } else {
        (pred.clone(), target.clone())
    };
    let b = pred.shape()[0];
    let logits = p.matmul_nt(&t)?.scale(F::one() / F::lit(tau));
    let diag: Vec<usize> = (0..b).collect();
    Ok(logits.log_softmax()?.pick_last(&diag)?.mean().neg())
}

/// [`info_nce`] with the in-batch negative requirement enforced.
pub fn discriminative_loss<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, tau: f64, normalize: bool) -> Result<Tensor<F>> {
    let b = pred.shape().first().copied().unwrap_or(0);
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    info_nce(pred, target, tau, normalize)
}

/// Encoder stages that pretext objectives attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Levels {
    pub frame: bool,
    pub clip: bool,
    pub video: bool,
}

impl Levels {
    pub const ALL: Levels = Levels { frame: true, clip: true, video: true };
    pub const NONE: Levels = Levels { frame: false, clip: false, video: false };

    pub fn is_empty(&self) -> bool {
        !(self.frame || self.clip || self.video)
    }

    /// Every subset in the usual table order: -, F, C, V, F+C, F+V, C+V, F+C+V.
    pub fn all_subsets() -> Vec<Levels> {
        let l = |frame, clip, video| Levels { frame, clip, video };
        vec![
            l(false, false, false),
            l(true, false, false),
            l(false, true, false),
            l(false, false, true),
            l(true, true, false),
            l(true, false, true),
            l(false, true, true),
            l(true, true, true),
        ]
    }
}

impl fmt::Display for Levels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<&str> = [(self.frame, "F"), (self.clip, "C"), (self.video, "V")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, s)| *s)
            .collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Levels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "-" || s.eq_ignore_ascii_case("none") {
            return Ok(Levels::NONE);
        }
        let mut out = Levels::NONE;
        for part in s.split('+') {
            let slot = match part.trim().to_ascii_uppercase().as_str() {
                "F" => &mut out.frame,
                "C" => &mut out.clip,
                "V" => &mut out.video,
                other => return Err(Error::Config(format!("unknown level '{other}' in '{s}' (use F, C, V joined by +)"))),
            };
            if std::mem::replace(slot, true) {
                return Err(Error::Config(format!("level repeated in '{s}'")));
            }
        }
        Ok(out)
    }
}

/// Task heads used only during pre-training.
#[derive(Debug, Clone)]
pub struct PretextHeads<F: Real> {
    /// frame features -> original coordinates
    pub spatial: Linear<F>,
    /// clip `[CLS]` -> in-order logit
    pub clip_order: Linear<F>,
    /// video `[CLS]` -> in-order logit
    pub video_order: Linear<F>,
    /// video `[CLS]` over all but the last clip -> last clip embedding
    pub future: Linear<F>,
}

impl<F: Real> PretextHeads<F> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut init = Init::new(rng, cfg.init_std);
        Ok(PretextHeads {
            spatial: Linear::new("head.spatial", cfg.dim_f, 3, &mut init)?,
            clip_order: Linear::new("head.clip_order", cfg.dim_c, 1, &mut init)?,
            video_order: Linear::new("head.video_order", cfg.dim_v, 1, &mut init)?,
            future: Linear::new("head.future", cfg.dim_v, cfg.dim_c, &mut init)?,
        })
    }
}

impl<F: Real> Module<F> for PretextHeads<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.spatial.visit(f);
        self.clip_order.visit(f);
        self.video_order.visit(f);
        self.future.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.spatial.visit_mut(f);
        self.clip_order.visit_mut(f);
        self.video_order.visit_mut(f);
        self.future.visit_mut(f);
    }
}

/// Options of the contrastive objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastOptions {
    pub tau: f64,
    pub normalize: bool,
    pub stop_gradient: bool,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        ContrastOptions { tau: DEFAULT_TAU, normalize: true, stop_gradient: true }
    }
}

/// Random choices behind one pre-training step, drawn per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextDraws {
    pub corruption: Vec<CorruptionRecord>,
    /// (crop offset, swapped frames within the crop)
    pub clip_pairs: Vec<(usize, (usize, usize))>,
    pub video_swaps: Vec<(usize, usize)>,
}

pub fn draw_pretext(
    batch: &[&SkeletonSequence],
    cfg: &ModelConfig,
    bounds: &CoordBox,
    levels: Levels,
    rng: &mut ChaCha8Rng,
) -> Result<PretextDraws> {
    let mut d = PretextDraws { corruption: Vec::new(), clip_pairs: Vec::new(), video_swaps: Vec::new() };
    for seq in batch {
        if levels.frame {
            d.corruption.push(corrupt_spatial(seq, bounds, rng)?);
        }
        if levels.clip {
            d.clip_pairs.push(draw_clip_pair(seq.num_frames(), cfg.window, rng)?);
        }
        if levels.video {
            d.video_swaps.push(draw_swap(cfg.num_clips(seq.num_frames())?, rng)?);
        }
    }
    Ok(d)
}

/// Per-objective losses of one step. Inactive objectives are `None`.
#[derive(Debug, Clone)]
pub struct PretextLosses<F: Real> {
    pub spatial: Option<Tensor<F>>,
    pub clip_order: Option<Tensor<F>>,
    pub video_order: Option<Tensor<F>>,
    pub discriminative: Option<Tensor<F>>,
    pub total: Tensor<F>,
}

impl<F: Real> PretextLosses<F> {
    pub fn values(&self) -> LossValues {
        let v = |t: &Option<Tensor<F>>| t.as_ref().map(|x| x.item().to_f64().unwrap_or(f64::NAN));
        LossValues {
            spatial: v(&self.spatial),
            clip_order: v(&self.clip_order),
            video_order: v(&self.video_order),
            discriminative: v(&self.discriminative),
            total: self.total.item().to_f64().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub spatial: Option<f64>,
    pub clip_order: Option<f64>,
    pub video_order: Option<f64>,
    pub discriminative: Option<f64>,
    pub total: f64,
}

impl LossValues {
    pub fn components(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("spatial", self.spatial),
            ("clip_order", self.clip_order),
            ("video_order", self.video_order),
            ("discriminative", self.discriminative),
        ]
    }
}

fn points_tensor<F: Real>(pts: &[Point]) -> Result<Tensor<F>> {
    let data = pts.iter().flatten().map(|&v| F::lit(v)).collect();
    Ok(Tensor::new(&[pts.len(), 3], data)?)
}

/// Hierarchical pre-training objective restricted to `levels`: frame ->
/// masked-joint regression, clip -> clip order, video -> video order plus
/// future-clip prediction. The total is the unweighted sum.
pub fn pretext_losses<F: Real>(
    encoder: &HierarchicalEncoder<F>,
    heads: &PretextHeads<F>,
    batch: &[&SkeletonSequence],
    draws: &PretextDraws,
    levels: Levels,
    contrast: ContrastOptions,
) -> Result<PretextLosses<F>> {
    if levels.is_empty() {
        return Err(Error::Config("no pretext level selected".into()));
    }
    let cfg = encoder.config();
    let b = batch.len();
    let first = batch.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
    let (t, j) = (first.num_frames(), first.num_joints());
    let mut out = PretextLosses { spatial: None, clip_order: None, video_order: None, discriminative: None, total: Tensor::scalar(F::zero()) };

    if levels.frame {
        let corrupted: Vec<&SkeletonSequence> = draws.corruption.iter().map(|r| &r.corrupted).collect();
        let (spatial, _) = encoder.frames(&coords_tensor(&corrupted)?)?;
        let mut rows = Vec::new();
        let mut originals = Vec::new();
        for (i, rec) in draws.corruption.iter().enumerate() {
            rows.extend(rec.mask_set.iter().map(|&(f, k)| (i * t + f) * j + k));
            originals.extend_from_slice(&rec.originals);
        }
        let feats = spatial.reshape(&[b * t * j, cfg.dim_f])?.select_rows(&rows)?;
        let pred = heads.spatial.forward(&feats)?;
        out.spatial = Some(spatial_loss(&pred, &points_tensor(&originals)?)?);
    }

    if levels.clip || levels.video {
        let (spatial, _) = encoder.frames(&coords_tensor(batch)?)?;
        let w = cfg.window;
        // Clip-stage inputs: sliding windows (video level) then positive and
        // negative crops (clip level), all in one pass.
        let mut rows = Vec::new();
        let mut n = 0;
        if levels.video {
            rows = encoder.window_rows(b, t)?;
            n = rows.len() / (b * w);
        }
        let windows = rows.len() / w;
        if levels.clip {
            for neg in [false, true] {
                for (i, &(offset, (p, q))) in draws.clip_pairs.iter().enumerate() {
                    for f in 0..w {
                        let src = match (neg, f) {
                            (true, f) if f == p => q,
                            (true, f) if f == q => p,
                            _ => f,
                        };
                        rows.push(i * t + offset + src);
                    }
                }
            }
        }
        let clips = encoder.ctrs_forward(&encoder.gather_clips(&spatial, &rows, w)?, w, j)?;

        if levels.clip {
            let logits = heads.clip_order.forward(&clips.cls.narrow_rows(windows, 2 * b)?)?;
            let p = logits.reshape(&[2 * b])?.sigmoid();
            out.clip_order = Some(temporal_loss(&p.narrow_rows(0, b)?, &p.narrow_rows(b, b)?)?);
        }

        if levels.video {
            let embs = clips.cls.narrow_rows(0, windows)?;
            let mut order: Vec<usize> = (0..b * n).collect();
            for (i, &(p, q)) in draws.video_swaps.iter().enumerate() {
                order.swap(i * n + p, i * n + q);
            }
            let both = Tensor::cat(&[embs.clone(), embs.select_rows(&order)?], 0)?.reshape(&[2 * b, n, cfg.dim_c])?;
            let video = encoder.vtrs_forward(&both)?;
            let p = heads.video_order.forward(&video.video)?.reshape(&[2 * b])?.sigmoid();
            out.video_order = Some(temporal_loss(&p.narrow_rows(0, b)?, &p.narrow_rows(b, b)?)?);

            let context_rows: Vec<usize> = (0..b).flat_map(|i| (0..n - 1).map(move |c| i * n + c)).collect();
            let context = embs.select_rows(&context_rows)?.reshape(&[b, n - 1, cfg.dim_c])?;
            let pred = heads.future.forward(&encoder.vtrs_forward(&context)?.video)?;
            let last: Vec<usize> = (0..b).map(|i| i * n + n - 1).collect();
            let mut target = embs.select_rows(&last)?;
            if contrast.stop_gradient {
                target = target.detach();
            }
            out.discriminative = Some(discriminative_loss(&pred, &target, contrast.tau, contrast.normalize)?);
        }
    }

    let parts: Vec<&Tensor<F>> =
        [&out.spatial, &out.clip_order, &out.video_order, &out.discriminative].into_iter().flatten().collect();
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total = total.add(p)?;
    }
    out.total = total;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    type T = Tensor<f64>;

    #[test]
    fn spatial_loss_cases() {
        let z = T::zeros(&[1, 3]).unwrap();
        assert_eq!(spatial_loss(&z, &z).unwrap().item(), 0.0);
        let r = T::from_f64(&[1, 3], &[0.1, -0.2, 0.3]).unwrap();
        assert!((spatial_loss(&r, &z).unwrap().item() - 0.6).abs() < 1e-15);
        let two = T::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 0.0, 0.2, 0.0]).unwrap();
        let z2 = T::zeros(&[2, 3]).unwrap();
        assert!((spatial_loss(&two, &z2).unwrap().item() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn temporal_loss_cases() {
        let l = |a: f64, b: f64| {
            temporal_loss(&T::from_f64(&[1], &[a]).unwrap(), &T::from_f64(&[1], &[b]).unwrap()).unwrap().item()
        };
        assert!(l(1.0, 0.0) < 1e-6);
        assert!((l(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l(0.9, 0.1) + 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!(l(0.0, 1.0).is_finite());
    }

    #[test]
    fn info_nce_cases() {
        let e = T::from_f64(&[1, 3], &[0.3, 1.0, -2.0]).unwrap();
        assert_eq!(info_nce(&e, &e, 0.07, true).unwrap().item(), 0.0);
        assert!(matches!(discriminative_loss(&e, &e, 0.07, true), Err(Error::DegenerateBatch(1))));

        let targets = T::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let l = info_nce(&targets, &targets, 1.0, true).unwrap().item();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn levels_parse_and_print() {
        for l in Levels::all_subsets() {
            assert_eq!(l.to_string().parse::<Levels>().unwrap(), l);
        }
        assert_eq!("f+c+v".parse::<Levels>().unwrap(), Levels::ALL);
        assert!("F+F".parse::<Levels>().is_err());
        assert!("X".parse::<Levels>().is_err());
    }

    #[test]
    fn swaps_are_distinct() {
        let mut r = rng::stream(3, rng::CORRUPTION);
        for n in 2..10 {
            for _ in 0..50 {
                let (a, b) = draw_swap(n, &mut r).unwrap();
                assert!(a != b && a < n && b < n);
            }
        }
        assert!(draw_swap(1, &mut r).is_err());
    }
}
