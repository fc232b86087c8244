use super::skeleton::{Point, SkeletonSequence};
use crate::error::{Error, Result};

/// Start frames of every full window; trailing frames that do not fill a
/// window are dropped.
pub fn clip_starts(num_frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::Argument(format!("window ({window}) and stride ({stride}) must be positive")));
    }
    if window > num_frames {
        return Err(Error::InsufficientLength { what: "frames for one clip window", needed: window, got: num_frames });
    }
    let count = (num_frames - window) / stride + 1;
    if count < 2 {
        return Err(Error::InsufficientLength { what: "clips", needed: 2, got: count });
    }
    Ok((0..count).map(|i| i * stride).collect())
}

/// Ordered sliding windows over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet {
    clips: Vec<Vec<Point>>,
    window: usize,
    stride: usize,
    num_joints: usize,
    source_length: usize,
}

impl ClipSet {
    pub fn clips(&self) -> &[Vec<Point>] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    /// First source frame covered by clip `i`.
    pub fn start(&self, i: usize) -> usize {
        i * self.stride
    }

    /// Point of joint `j` in frame `f` of clip `i`.
    pub fn point(&self, i: usize, f: usize, j: usize) -> Point {
        self.clips[i][f * self.num_joints + j]
    }

    /// Same windows in a different order; used for clip-swap negatives.
    pub fn reordered(&self, order: &[usize]) -> Result<ClipSet> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Argument(format!("{order:?} is not a permutation of {} clips", self.len())));
        }
        Ok(ClipSet { clips: order.iter().map(|&i| self.clips[i].clone()).collect(), ..self.clone() })
    }
}

pub fn window_clips(seq: &SkeletonSequence, window: usize, stride: usize) -> Result<ClipSet> {
    let starts = clip_starts(seq.num_frames(), window, stride)?;
    let j = seq.num_joints();
    let clips = starts.iter().map(|&s| seq.points()[s * j..(s + window) * j].to_vec()).collect();
    Ok(ClipSet { clips, window, stride, num_joints: j, source_length: seq.num_frames() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> SkeletonSequence {
        let pts = (0..t).flat_map(|f| [[f as f64, 0., 0.], [f as f64, 1., 0.]]).collect();
        SkeletonSequence::new(pts, 2, 30.0, vec![0, 0]).unwrap()
    }

    #[test]
    fn window_examples() {
        let c = window_clips(&ramp(20), 8, 4).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!((0..4).map(|i| c.point(i, 0, 0)[0] as usize).collect::<Vec<_>>(), vec![0, 4, 8, 12]);

        assert!(matches!(
            window_clips(&ramp(8), 8, 1),
            Err(Error::InsufficientLength { what: "clips", needed: 2, got: 1 })
        ));

        let c = window_clips(&ramp(9), 4, 4).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.point(1, 3, 0)[0], 7.0);
    }

    #[test]
    fn bad_windows_are_rejected() {
        assert!(window_clips(&ramp(5), 6, 1).is_err());
        assert!(window_clips(&ramp(5), 2, 0).is_err());
        assert!(window_clips(&ramp(5), 0, 1).is_err());
    }

    #[test]
    fn reorder_checks_permutation() {
        let c = window_clips(&ramp(12), 4, 4).unwrap();
        let r = c.reordered(&[2, 1, 0]).unwrap();
        assert_eq!(r.clips()[0], c.clips()[2]);
        assert!(c.reordered(&[0, 0, 1]).is_err());
        assert!(c.reordered(&[0, 1]).is_err());
    }
}
