//! Segment-level mean average precision.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Half-open frame interval `[start_frame, end_frame)` with a class and a
/// confidence. Class 0 is background and never appears in a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub class_id: usize,
    pub score: f64,
}

impl DetectionSegment {
    pub fn new(start_frame: usize, end_frame: usize, class_id: usize, score: f64) -> Result<Self> {
        if start_frame >= end_frame {
            return Err(Error::Argument(format!("empty segment [{start_frame}, {end_frame})")));
        }
        if !score.is_finite() {
            return Err(Error::Argument(format!("segment score {score} is not finite")));
        }
        Ok(DetectionSegment { start_frame, end_frame, class_id, score })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn temporal_iou(a: &DetectionSegment, b: &DetectionSegment) -> f64 {
    let inter = a.end_frame.min(b.end_frame).saturating_sub(a.start_frame.max(b.start_frame));
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApMode {
    /// averaged over action classes (mAP_a)
    PerAction,
    /// averaged over videos (mAP_v)
    PerVideo,
}

/// Descending score; ties keep input order.
pub fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// True-positive flags for `preds` (all one class, one video) against `gt`.
///
/// Predictions are admitted in descending score order; each admission may
/// re-route earlier matches along an augmenting path, so the flag vector in
/// that order is the lexicographically largest achievable by any one-to-one
/// assignment with IoU >= `overlap`.
pub fn match_segments(preds: &[DetectionSegment], gt: &[DetectionSegment], overlap: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(preds[a].score, preds[b].score));
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..gt.len()).filter(|&g| gt[g].class_id == p.class_id && temporal_iou(p, &gt[g]) >= overlap).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gt.len()];
    let mut tp = vec![false; preds.len()];
    for &p in &order {
        let mut seen = vec![false; gt.len()];
        if augment(p, &adj, &mut owner, &mut seen) {
            tp[p] = true;
        }
    }
    tp
}

fn augment(p: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &g in &adj[p] {
        if seen[g] {
            continue;
        }
        seen[g] = true;
        if owner[g].is_none_or(|q| augment(q, adj, owner, seen)) {
            owner[g] = Some(p);
            return true;
        }
    }
    false
}

/// All-point interpolated AP from ranked true-positive flags.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut precision: Vec<f64> = ranked_tp
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            hits += usize::from(t);
            hits as f64 / (k + 1) as f64
        })
        .collect();
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for (k, &t) in ranked_tp.iter().enumerate() {
        if t {
            sum += precision[k];
        }
    }
    sum / num_gt as f64
}

/// mAP over `pred[v]` / `gt[v]` segment lists per video. Units (classes or
/// videos) without ground truth are skipped; `Ok(None)` when every unit is.
pub fn mean_average_precision(
    pred: &[Vec<DetectionSegment>],
    gt: &[Vec<DetectionSegment>],
    overlap: f64,
    mode: ApMode,
) -> Result<Option<f64>> {
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::Argument(format!("overlap must lie in (0, 1], got {overlap}")));
    }
    if pred.len() != gt.len() {
        return Err(Error::Argument(format!("{} prediction lists for {} videos", pred.len(), gt.len())));
    }
    // (video, class) -> flags per prediction index
    let mut flags: Vec<Vec<bool>> = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let mut f = vec![false; p.len()];
        let mut classes: Vec<usize> = p.iter().map(|s| s.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            let idx: Vec<usize> = (0..p.len()).filter(|&i| p[i].class_id == c).collect();
            let sub: Vec<DetectionSegment> = idx.iter().map(|&i| p[i]).collect();
            let gsub: Vec<DetectionSegment> = g.iter().copied().filter(|s| s.class_id == c).collect();
            for (k, t) in match_segments(&sub, &gsub, overlap).into_iter().enumerate() {
                f[idx[k]] = t;
            }
        }
        flags.push(f);
    }

    let ap_of = |items: Vec<(usize, usize)>, num_gt: usize| {
        let mut items = items;
        items.sort_by(|&(va, ia), &(vb, ib)| by_score_desc(pred[va][ia].score, pred[vb][ib].score));
        let ranked: Vec<bool> = items.iter().map(|&(v, i)| flags[v][i]).collect();
        average_precision(&ranked, num_gt)
    };

    let mut aps = Vec::new();
    match mode {
        ApMode::PerVideo => {
            for (v, g) in gt.iter().enumerate() {
                if g.is_empty() {
                    continue;
                }
                aps.push(ap_of((0..pred[v].len()).map(|i| (v, i)).collect(), g.len()));
            }
        }
        ApMode::PerAction => {
            let mut classes: Vec<usize> = gt.iter().flatten().map(|s| s.class_id).collect();
            classes.sort_unstable();
            classes.dedup();
            for c in classes {
                let num_gt = gt.iter().flatten().filter(|s| s.class_id == c).count();
                let items = pred
                    .iter()
                    .enumerate()
                    .flat_map(|(v, p)| p.iter().enumerate().filter(|(_, s)| s.class_id == c).map(move |(i, _)| (v, i)))
                    .collect();
                aps.push(ap_of(items, num_gt));
            }
        }
    }
    if aps.is_empty() {
        return Ok(None);
    }
    Ok(Some(aps.iter().sum::<f64>() / aps.len() as f64))
}
