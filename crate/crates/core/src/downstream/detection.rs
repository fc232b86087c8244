//! Per-frame action detection on short centered clips.
//!
//! Detection classes are shifted by one: 0 is background, `c + 1` is
//! action `c` of the frame labels.

use hiskel_autodiff::{Parameter, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use super::map::DetectionSegment;
use crate::data::{SkeletonSequence, BACKGROUND};
use crate::encoder::{coords_tensor, HierarchicalEncoder};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};

/// Largest odd width not above the clip width, so windows can be centered.
pub fn detection_window(clip_width: usize) -> usize {
    if clip_width % 2 == 1 {
        clip_width
    } else {
        clip_width.saturating_sub(1).max(1)
    }
}

/// Frames `[t - w/2, t + ceil(w/2))` with indices outside the sequence
/// clamped to its first or last frame.
pub fn centered_frames(num_frames: usize, t: usize, width: usize) -> Vec<usize> {
    let half = (width / 2) as isize;
    let last = num_frames as isize - 1;
    (0..width as isize).map(|k| (t as isize - half + k).clamp(0, last) as usize).collect()
}

pub fn detection_label(frame_label: i64) -> usize {
    if frame_label == BACKGROUND {
        0
    } else {
        frame_label as usize + 1
    }
}

#[derive(Debug, Clone)]
pub struct DetectionModel<F: Real> {
    pub encoder: HierarchicalEncoder<F>,
    /// clip `[CLS]` -> background + actions
    pub head: Linear<F>,
}

impl<F: Real> DetectionModel<F> {
    pub fn new(encoder: HierarchicalEncoder<F>, num_actions: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg = encoder.config();
        let head = Linear::new("head.detector", cfg.dim_c, num_actions + 1, &mut Init::new(rng, cfg.init_std))?;
        Ok(DetectionModel { encoder, head })
    }

    pub fn width(&self) -> usize {
        detection_window(self.encoder.config().window)
    }

    pub fn num_outputs(&self) -> usize {
        self.head.d_out()
    }

    /// Logits `[sum of frames, actions + 1]` for the listed frames of each
    /// sequence. Sequences must share their length.
    pub fn frame_logits(&self, batch: &[&SkeletonSequence], frames: &[Vec<usize>]) -> Result<Tensor<F>> {
        if batch.len() != frames.len() {
            return Err(Error::Argument("one frame list per sequence is required".into()));
        }
        let w = self.width();
        let coords = coords_tensor(batch)?;
        let (t, j) = (coords.shape()[1], coords.shape()[2]);
        let (spatial, _) = self.encoder.frames(&coords)?;
        let mut rows = Vec::new();
        for (b, fs) in frames.iter().enumerate() {
            for &f in fs {
                if f >= t {
                    return Err(Error::Argument(format!("frame {f} outside a {t}-frame sequence")));
                }
                rows.extend(centered_frames(t, f, w).into_iter().map(|r| b * t + r));
            }
        }
        let clips = self.encoder.ctrs_forward(&self.encoder.gather_clips(&spatial, &rows, w)?, w, j)?;
        self.head.forward(&clips.cls)
    }

    /// `[T, actions + 1]` logits for every frame of `seq`.
    pub fn detect_frames(&self, seq: &SkeletonSequence) -> Result<Tensor<F>> {
        self.frame_logits(&[seq], &[(0..seq.num_frames()).collect()])
    }
}

impl<F: Real> Module<F> for DetectionModel<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.encoder.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.encoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Maximal runs of one non-background class, scored by mean confidence.
pub fn frames_to_segments(pred: &[usize], conf: &[f64]) -> Result<Vec<DetectionSegment>> {
    if pred.len() != conf.len() {
        return Err(Error::Argument(format!("{} labels but {} confidences", pred.len(), conf.len())));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < pred.len() {
        let mut end = start + 1;
        while end < pred.len() && pred[end] == pred[start] {
            end += 1;
        }
        if pred[start] != 0 {
            let score = conf[start..end].iter().sum::<f64>() / (end - start) as f64;
            out.push(DetectionSegment::new(start, end, pred[start], score)?);
        }
        start = end;
    }
    Ok(out)
}

/// Per-frame labels covered by `segments`; uncovered frames are background.
pub fn rasterize(segments: &[DetectionSegment], num_frames: usize) -> Vec<usize> {
    let mut out = vec![0; num_frames];
    for s in segments {
        for v in &mut out[s.start_frame..s.end_frame.min(num_frames)] {
            *v = s.class_id;
        }
    }
    out
}

/// Ground-truth segments of annotated frame labels, score 1.
pub fn label_segments(frame_labels: &[i64]) -> Result<Vec<DetectionSegment>> {
    let shifted: Vec<usize> = frame_labels.iter().map(|&l| detection_label(l)).collect();
    frames_to_segments(&shifted, &vec![1.0; shifted.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_examples() {
        let s = frames_to_segments(&[0, 1, 1, 1, 0], &[0.5; 5]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start_frame, s[0].end_frame, s[0].class_id), (1, 4, 1));
        assert!(frames_to_segments(&[0, 0, 0], &[1.0; 3]).unwrap().is_empty());
        let s = frames_to_segments(&[1, 1, 2, 2], &[0.2, 0.4, 1.0, 0.0]).unwrap();
        assert_eq!((s[0].start_frame, s[0].end_frame, s[0].class_id), (0, 2, 1));
        assert_eq!((s[1].start_frame, s[1].end_frame, s[1].class_id), (2, 4, 2));
        assert!((s[0].score - 0.3).abs() < 1e-15 && (s[1].score - 0.5).abs() < 1e-15);
    }

    #[test]
    fn centered_windows_clamp_at_edges() {
        assert_eq!(centered_frames(10, 0, 5), vec![0, 0, 0, 1, 2]);
        assert_eq!(centered_frames(10, 5, 5), vec![3, 4, 5, 6, 7]);
        assert_eq!(centered_frames(10, 9, 5), vec![7, 8, 9, 9, 9]);
        assert_eq!(centered_frames(1, 0, 3), vec![0, 0, 0]);
        assert_eq!(detection_window(8), 7);
        assert_eq!(detection_window(7), 7);
        assert_eq!(detection_window(1), 1);
    }

    #[test]
    fn labels_shift_past_background() {
        let s = label_segments(&[-1, 0, 0, -1, 1]).unwrap();
        assert_eq!(rasterize(&s, 5), vec![0, 1, 1, 0, 2]);
    }
}
