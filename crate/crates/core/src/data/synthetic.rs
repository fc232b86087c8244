//! Procedural motion on the 9-joint stick figure.
//!
//! Paired classes (clockwise/counter-clockwise circles, raise/lower sawtooth)
//! are time reversals of each other under a random phase, so single frames
//! carry no class information; only the direction of motion does.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::skeleton::{Point, SkeletonSequence, BACKGROUND, STICK_FIGURE};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn lateral(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionClass {
    /// Rest pose held for the whole sequence.
    Static,
    /// Rest pose with slow breathing sway; the detection background.
    Idle,
    /// One outstretched arm tracing a circle in front of the body.
    Circle { clockwise: bool },
    /// Both arms lifted slowly and dropped quickly.
    Raise,
    /// Time reversal of `Raise`.
    Lower,
    /// One arm raised and swaying side to side.
    Wave { side: Side },
    /// Rigid rest pose drifting at a constant velocity.
    Translate { min_speed: f64, max_speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Each sequence is one class for its whole length.
    #[default]
    Trimmed,
    /// Idle background with embedded action segments and per-frame labels.
    Untrimmed { segments: usize, min_len: usize, max_len: usize, min_gap: usize },
}

/// Per-sequence random variation shared by every class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nuisance {
    /// Half-width of the horizontal placement box, meters.
    pub translation: f64,
    /// Largest body rotation about the vertical axis, radians.
    pub yaw: f64,
    /// Relative body-size jitter.
    pub scale: f64,
    /// Motion period range, seconds.
    pub min_period: f64,
    pub max_period: f64,
}

impl Default for Nuisance {
    fn default() -> Self {
        Nuisance { translation: 0.3, yaw: 0.3, scale: 0.1, min_period: 0.8, max_period: 1.6 }
    }
}

fn default_joints() -> usize {
    STICK_FIGURE.len()
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: Vec<MotionClass>,
    pub n_per_class: usize,
    #[serde(rename = "T")]
    pub num_frames: usize,
    #[serde(rename = "J", default = "default_joints")]
    pub num_joints: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub nuisance: Nuisance,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.is_empty() {
            return bad("synthetic spec lists no classes".into());
        }
        if self.num_joints != STICK_FIGURE.len() {
            return bad(format!("generators animate the {}-joint figure, J={} requested", STICK_FIGURE.len(), self.num_joints));
        }
        if self.num_frames == 0 || !(self.fps > 0.0) || !(self.noise_std >= 0.0) {
            return bad("T, fps must be positive and noise_std non-negative".into());
        }
        let n = &self.nuisance;
        if !(n.min_period > 0.0 && n.min_period <= n.max_period) || !(0.0..1.0).contains(&n.scale) {
            return bad("nuisance periods must satisfy 0 < min <= max and scale in [0, 1)".into());
        }
        if let Layout::Untrimmed { segments, min_len, max_len, min_gap } = self.layout {
            if segments == 0 || min_len == 0 || min_len > max_len {
                return bad("untrimmed layout needs segments >= 1 and 1 <= min_len <= max_len".into());
            }
            if segments * max_len + (segments + 1) * min_gap > self.num_frames {
                return bad(format!("{segments} segments of up to {max_len} frames do not fit in T={}", self.num_frames));
            }
        }
        for c in &self.classes {
            if let MotionClass::Translate { min_speed, max_speed } = *c {
                if !(min_speed >= 0.0 && min_speed <= max_speed) {
                    return bad("translate speeds must satisfy 0 <= min <= max".into());
                }
            }
        }
        Ok(())
    }
}

/// Direction of a straight arm, from shoulder towards hand, in body axes
/// (x lateral right, y up, z forward).
type ArmDir = [f64; 3];

const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.26;

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn hanging(side: Side) -> ArmDir {
    normalize([side.lateral() * 0.1, -1.0, 0.03])
}

/// Body-frame joints for one frame given both arm directions and a small
/// vertical chest offset. The pelvis sits at the origin.
fn pose(left: ArmDir, right: ArmDir, chest_dy: f64) -> [Point; 9] {
    let pelvis = [0.0, 0.0, 0.0];
    let chest = [0.0, 0.42 + chest_dy, 0.0];
    let head = [0.0, 0.68 + chest_dy, 0.02];
    let arm = |side: Side, d: ArmDir| {
        let s = [side.lateral() * 0.18, chest[1] - 0.02, 0.0];
        let e = [s[0] + UPPER_ARM * d[0], s[1] + UPPER_ARM * d[1], s[2] + UPPER_ARM * d[2]];
        let h = [e[0] + FOREARM * d[0], e[1] + FOREARM * d[1], e[2] + FOREARM * d[2]];
        [s, e, h]
    };
    let [ls, le, lh] = arm(Side::Left, left);
    let [rs, re, rh] = arm(Side::Right, right);
    [pelvis, chest, head, ls, le, lh, rs, re, rh]
}

/// Asymmetric sawtooth in [0, 1]: rises over 80% of the cycle.
fn sawtooth(u: f64) -> f64 {
    let u = u.rem_euclid(1.0);
    if u < 0.8 {
        u / 0.8
    } else {
        (1.0 - u) / 0.2
    }
}

/// Per-sequence draws for one class.
struct Motion {
    class: MotionClass,
    phase: f64,
    period_frames: f64,
    side: Side,
    radius: f64,
    velocity: [f64; 3],
}

impl Motion {
    fn draw(class: MotionClass, fps: f64, nuisance: &Nuisance, rng: &mut ChaCha8Rng) -> Self {
        let period = rng.random_range(nuisance.min_period..=nuisance.max_period);
        let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
        let velocity = match class {
            MotionClass::Translate { min_speed, max_speed } => {
                let speed = rng.random_range(min_speed..=max_speed);
                let heading = rng.random_range(0.0..TAU);
                [speed * heading.cos() / fps, 0.0, speed * heading.sin() / fps]
            }
            _ => [0.0; 3],
        };
        Motion {
            class,
            phase: rng.random_range(0.0..1.0),
            period_frames: period * fps,
            side,
            radius: rng.random_range(0.35..0.55),
            velocity,
        }
    }

    fn frame(&self, t: f64) -> [Point; 9] {
        let u = self.phase + t / self.period_frames;
        let idle = |amp: f64| {
            let sway = amp * (TAU * u).sin();
            (normalize([-0.1, -1.0, 0.03 + sway]), normalize([0.1, -1.0, 0.03 - sway]), 0.125 * sway)
        };
        match self.class {
            MotionClass::Static => pose(hanging(Side::Left), hanging(Side::Right), 0.0),
            MotionClass::Idle | MotionClass::Translate { .. } => {
                let (l, r, dy) = if matches!(self.class, MotionClass::Idle) { idle(0.08) } else { idle(0.0) };
                let mut p = pose(l, r, dy);
                for q in &mut p {
                    for k in 0..3 {
                        q[k] += self.velocity[k] * t;
                    }
                }
                p
            }
            MotionClass::Circle { clockwise } => {
                let dir = if clockwise { -1.0 } else { 1.0 };
                let theta = dir * TAU * u;
                let lat = self.side.lateral();
                let d = normalize([lat * 0.15 + self.radius * theta.cos(), 0.1 + self.radius * theta.sin(), 1.0]);
                match self.side {
                    Side::Left => pose(d, hanging(Side::Right), 0.0),
                    Side::Right => pose(hanging(Side::Left), d, 0.0),
                }
            }
            MotionClass::Raise | MotionClass::Lower => {
                let s = if matches!(self.class, MotionClass::Raise) { sawtooth(u) } else { sawtooth(-u) };
                let alpha = 0.1 * PI + 0.7 * PI * s;
                let arm = |side: Side| [side.lateral() * alpha.sin(), -alpha.cos(), 0.05];
                pose(arm(Side::Left), arm(Side::Right), 0.0)
            }
            MotionClass::Wave { side } => {
                let lat = side.lateral();
                let d = normalize([lat * (0.35 + 0.45 * (TAU * u).sin()), 1.0, 0.15]);
                match side {
                    Side::Left => pose(d, hanging(Side::Right), 0.0),
                    Side::Right => pose(hanging(Side::Left), d, 0.0),
                }
            }
        }
    }
}

/// Rigid placement of one body in the world.
struct Placement {
    yaw: f64,
    scale: f64,
    offset: [f64; 3],
}

impl Placement {
    fn draw(n: &Nuisance, rng: &mut ChaCha8Rng) -> Self {
        let sym = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        let yaw = sym(rng, n.yaw);
        let scale = 1.0 + sym(rng, n.scale);
        let offset = [sym(rng, n.translation), 0.0, sym(rng, n.translation)];
        Placement { yaw, scale, offset }
    }

    fn apply(&self, p: Point) -> Point {
        let (s, c) = self.yaw.sin_cos();
        let (x, y, z) = (p[0] * self.scale, p[1] * self.scale, p[2] * self.scale);
        [c * x + s * z + self.offset[0], y + self.offset[1], -s * x + c * z + self.offset[2]]
    }
}

/// Disjoint `[start, end)` spans for `lens` segments inside `t` frames with
/// at least `gap` background frames before, between and after them.
fn place_segments(lens: &[usize], t: usize, gap: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let k = lens.len();
    let slack = t - lens.iter().sum::<usize>() - (k + 1) * gap;
    // Distribute the slack over k + 1 gaps via sorted uniform cut points.
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut spans = Vec::with_capacity(k);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (i, &len) in lens.iter().enumerate() {
        cursor += gap + (cuts[i] - prev_cut);
        prev_cut = cuts[i];
        spans.push((cursor, cursor + len));
        cursor += len;
    }
    spans
}

/// Deterministic dataset for `spec`; sequence `k` belongs to class
/// `k % classes.len()`, so every prefix of whole rounds is balanced.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::DATA);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let n_classes = spec.classes.len();
    let t = spec.num_frames;
    let mut out = Vec::with_capacity(spec.n_per_class * n_classes);
    for k in 0..spec.n_per_class * n_classes {
        let class_id = k % n_classes;
        let placement = Placement::draw(&spec.nuisance, &mut rng);
        let mut frames: Vec<[Point; 9]> = Vec::with_capacity(t);
        let mut frame_labels = None;
        match spec.layout {
            Layout::Trimmed => {
                let m = Motion::draw(spec.classes[class_id], spec.fps, &spec.nuisance, &mut rng);
                frames.extend((0..t).map(|f| m.frame(f as f64)));
            }
            Layout::Untrimmed { segments, min_len, max_len, min_gap } => {
                let background = Motion::draw(MotionClass::Idle, spec.fps, &spec.nuisance, &mut rng);
                let ids: Vec<usize> =
                    (0..segments).map(|s| if s == 0 { class_id } else { rng.random_range(0..n_classes) }).collect();
                let lens: Vec<usize> = (0..segments).map(|_| rng.random_range(min_len..=max_len)).collect();
                let spans = place_segments(&lens, t, min_gap, &mut rng);
                let mut labels = vec![BACKGROUND; t];
                frames.extend((0..t).map(|f| background.frame(f as f64)));
                for (&id, &(a, b)) in ids.iter().zip(&spans) {
                    let m = Motion::draw(spec.classes[id], spec.fps, &spec.nuisance, &mut rng);
                    for f in a..b {
                        frames[f] = m.frame((f - a) as f64);
                        labels[f] = id as i64;
                    }
                }
                frame_labels = Some(labels);
            }
        }
        let mut points = Vec::with_capacity(t * STICK_FIGURE.len());
        for fr in &frames {
            for &p in fr {
                let mut q = placement.apply(p);
                if spec.noise_std > 0.0 {
                    for c in &mut q {
                        *c += noise.sample(&mut rng);
                    }
                }
                points.push(q);
            }
        }
        let mut seq = SkeletonSequence::new(points, STICK_FIGURE.len(), spec.fps, STICK_FIGURE.to_vec())?.with_label(class_id);
        if let Some(l) = frame_labels {
            seq = seq.with_frame_labels(l)?;
        }
        out.push(seq);
    }
    Ok(out)
}

/// World-frame velocity (meters per frame) of a `Translate` sequence,
/// recovered from its root trajectory.
pub fn root_velocity(seq: &SkeletonSequence) -> Point {
    let t = seq.num_frames();
    if t < 2 {
        return [0.0; 3];
    }
    let (a, b) = (seq.joint(0, 0), seq.joint(t - 1, 0));
    let n = (t - 1) as f64;
    [(b[0] - a[0]) / n, (b[1] - a[1]) / n, (b[2] - a[2]) / n]
}
