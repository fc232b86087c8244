use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Parent table of the default 9-joint stick figure: pelvis, spine, head,
/// then shoulder/elbow/hand for the left and right arms.
pub const STICK_FIGURE: [usize; 9] = [0, 0, 1, 1, 3, 4, 1, 6, 7];

/// Frame label for frames that belong to no action.
pub const BACKGROUND: i64 = -1;

/// A single-subject skeleton sequence, stored frame-major as `T x J` points.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    joints: Vec<Point>,
    num_frames: usize,
    num_joints: usize,
    fps: f64,
    label: Option<usize>,
    frame_labels: Option<Vec<i64>>,
    topology: Vec<usize>,
}

pub fn validate_topology(topology: &[usize]) -> Result<()> {
    let j = topology.len();
    if j < 2 {
        return Err(Error::InvalidSequence(format!("need at least 2 joints, got {j}")));
    }
    if let Some(bad) = topology.iter().position(|&p| p >= j) {
        return Err(Error::InvalidSequence(format!("joint {bad} has out-of-range parent {}", topology[bad])));
    }
    let roots: Vec<usize> = (0..j).filter(|&i| topology[i] == i).collect();
    if roots.len() != 1 {
        return Err(Error::InvalidSequence(format!("topology must have exactly one root, found {roots:?}")));
    }
    for start in 0..j {
        let mut cur = start;
        for _ in 0..j {
            cur = topology[cur];
        }
        if cur != roots[0] {
            return Err(Error::InvalidSequence(format!("joint {start} does not reach the root")));
        }
    }
    Ok(())
}

impl SkeletonSequence {
    pub fn new(joints: Vec<Point>, num_joints: usize, fps: f64, topology: Vec<usize>) -> Result<Self> {
        if topology.len() != num_joints {
            return Err(Error::InvalidSequence(format!(
                "topology lists {} joints, sequence has {num_joints}",
                topology.len()
            )));
        }
        validate_topology(&topology)?;
        if joints.is_empty() || joints.len() % num_joints != 0 {
            return Err(Error::InvalidSequence(format!(
                "{} points do not form whole frames of {num_joints} joints",
                joints.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidSequence(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = joints.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidSequence(format!("non-finite coordinate at point {i}")));
        }
        let num_frames = joints.len() / num_joints;
        Ok(SkeletonSequence { joints, num_frames, num_joints, fps, label: None, frame_labels: None, topology })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_frame_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.num_frames {
            return Err(Error::InvalidSequence(format!(
                "{} frame labels for {} frames",
                labels.len(),
                self.num_frames
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l < BACKGROUND) {
            return Err(Error::InvalidSequence(format!("frame label {bad} is below background (-1)")));
        }
        self.frame_labels = Some(labels);
        Ok(self)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn frame_labels(&self) -> Option<&[i64]> {
        self.frame_labels.as_deref()
    }

    pub fn topology(&self) -> &[usize] {
        &self.topology
    }

    /// All points, frame-major.
    pub fn points(&self) -> &[Point] {
        &self.joints
    }

    pub fn frame(&self, t: usize) -> &[Point] {
        &self.joints[t * self.num_joints..(t + 1) * self.num_joints]
    }

    pub fn joint(&self, t: usize, j: usize) -> Point {
        self.joints[t * self.num_joints + j]
    }

    /// Coordinates flattened to `T * J * 3` values.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    /// Same metadata, different coordinates (must keep the frame count).
    pub fn with_points(&self, joints: Vec<Point>) -> Result<Self> {
        if joints.len() != self.joints.len() {
            return Err(Error::InvalidSequence(format!(
                "replacement has {} points, expected {}",
                joints.len(),
                self.joints.len()
            )));
        }
        let mut out = Self::new(joints, self.num_joints, self.fps, self.topology.clone())?;
        out.label = self.label;
        out.frame_labels = self.frame_labels.clone();
        Ok(out)
    }

    /// Frames `[start, start + len)` as a new sequence; frame labels follow.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames {
            return Err(Error::InsufficientLength { what: "frame slice", needed: start + len.max(1), got: self.num_frames });
        }
        let j = self.num_joints;
        let mut out = Self::new(self.joints[start * j..(start + len) * j].to_vec(), j, self.fps, self.topology.clone())?;
        out.label = self.label;
        out.frame_labels = self.frame_labels.as_ref().map(|l| l[start..start + len].to_vec());
        Ok(out)
    }

    pub fn translated(&self, offset: Point) -> Self {
        let mut out = self.clone();
        for p in &mut out.joints {
            for k in 0..3 {
                p[k] += offset[k];
            }
        }
        out
    }
}

/// Parent-relative offsets; the root becomes the zero vector.
pub fn bone_view(seq: &SkeletonSequence) -> SkeletonSequence {
    let j = seq.num_joints;
    let mut out = seq.clone();
    for (t, frame) in out.joints.chunks_mut(j).enumerate() {
        let src = seq.frame(t);
        for (i, p) in frame.iter_mut().enumerate() {
            let parent = src[seq.topology[i]];
            *p = [src[i][0] - parent[0], src[i][1] - parent[1], src[i][2] - parent[2]];
        }
    }
    out
}

/// Forward differences between consecutive frames; the last frame is zero.
pub fn motion_view(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.num_frames < 2 {
        return Err(Error::InsufficientLength { what: "motion view frames", needed: 2, got: seq.num_frames });
    }
    let j = seq.num_joints;
    let mut out = seq.clone();
    for t in 0..seq.num_frames {
        for i in 0..j {
            out.joints[t * j + i] = if t + 1 < seq.num_frames {
                let (a, b) = (seq.joint(t, i), seq.joint(t + 1, i));
                [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
            } else {
                [0.0; 3]
            };
        }
    }
    Ok(out)
}

/// Input view selected for a recognition stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stream {
    #[default]
    Joint,
    Bone,
    Motion,
}

impl Stream {
    pub fn apply(self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        match self {
            Stream::Joint => Ok(seq.clone()),
            Stream::Bone => Ok(bone_view(seq)),
            Stream::Motion => motion_view(seq),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Joint => "joint",
            Stream::Bone => "bone",
            Stream::Motion => "motion",
        }
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Stream::Joint),
            "bone" => Ok(Stream::Bone),
            "motion" => Ok(Stream::Motion),
            other => Err(Error::Config(format!("unknown stream '{other}' (joint, bone, motion)"))),
        }
    }
}

/// Uniform frame sampling to exactly `target` frames: output frame `i` takes
/// source frame `floor(i * T / target)`, which truncates long sequences
/// evenly and repeats frames of short ones.
pub fn resample(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Argument("resample target must be at least 1 frame".into()));
    }
    let t = seq.num_frames;
    if t == target {
        return Ok(seq.clone());
    }
    let picks: Vec<usize> = (0..target).map(|i| i * t / target).collect();
    let mut joints = Vec::with_capacity(target * seq.num_joints);
    for &s in &picks {
        joints.extend_from_slice(seq.frame(s));
    }
    let mut out = SkeletonSequence::new(joints, seq.num_joints, seq.fps, seq.topology.clone())?;
    out.label = seq.label;
    out.frame_labels = seq.frame_labels.as_ref().map(|l| picks.iter().map(|&s| l[s]).collect());
    Ok(out)
}

/// Axis-aligned box enclosing every coordinate of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordBox {
    pub lo: Point,
    pub hi: Point,
}

impl CoordBox {
    pub fn of(seqs: &[SkeletonSequence]) -> Option<Self> {
        let mut pts = seqs.iter().flat_map(|s| s.points().iter());
        let first = *pts.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in pts {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some(CoordBox { lo, hi })
    }
}
