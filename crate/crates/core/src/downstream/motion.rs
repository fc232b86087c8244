//! Short-term motion prediction: the encoder reads an observation window and
//! a recurrent decoder rolls out future poses as residual steps.

use hiskel_autodiff::{Parameter, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::data::{Point, SkeletonSequence};
use crate::encoder::{coords_tensor, HierarchicalEncoder};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};
use crate::train::CellKind;

/// Observation and prediction lengths in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionTask {
    pub observe_frames: usize,
    pub predict_frames: usize,
}

impl MotionTask {
    pub fn new(observe_frames: usize, predict_frames: usize) -> Result<Self> {
        if observe_frames == 0 || predict_frames == 0 {
            return Err(Error::Config("observe and predict lengths must be positive".into()));
        }
        Ok(MotionTask { observe_frames, predict_frames })
    }

    /// Two seconds observed, 400 ms predicted.
    pub fn at_fps(fps: f64) -> Result<Self> {
        Self::new((2.0 * fps).round() as usize, (0.4 * fps).round() as usize)
    }

    pub fn total(&self) -> usize {
        self.observe_frames + self.predict_frames
    }

    pub fn check(&self, num_frames: usize) -> Result<()> {
        if num_frames < self.total() {
            return Err(Error::InsufficientLength { what: "frames for observation plus prediction", needed: self.total(), got: num_frames });
        }
        Ok(())
    }

    /// (observed window, future frames) starting at `start`.
    pub fn split(&self, seq: &SkeletonSequence, start: usize) -> Result<(SkeletonSequence, Vec<Point>)> {
        self.check(seq.num_frames().saturating_sub(start))?;
        let obs = seq.slice_frames(start, self.observe_frames)?;
        let fut = seq.slice_frames(start + self.observe_frames, self.predict_frames)?;
        Ok((obs, fut.points().to_vec()))
    }
}

struct Gate<F: Real> {
    x: Linear<F>,
    h: Linear<F>,
}

impl<F: Real> Gate<F> {
    fn pre(&self, x: &Tensor<F>, h: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.x.forward(x)?.add(&self.h.forward(h)?)?)
    }
}

impl<F: Real> Clone for Gate<F> {
    fn clone(&self) -> Self {
        Gate { x: self.x.clone(), h: self.h.clone() }
    }
}

impl<F: Real> std::fmt::Debug for Gate<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gate").finish_non_exhaustive()
    }
}

/// Single-layer recurrent decoder emitting pose deltas.
#[derive(Debug, Clone)]
pub struct MotionDecoder<F: Real> {
    pub cell: CellKind,
    /// video embedding -> initial hidden state
    pub init: Linear<F>,
    gates: Vec<Gate<F>>,
    /// hidden state -> pose delta
    pub out: Linear<F>,
}

impl<F: Real> MotionDecoder<F> {
    pub fn new(cell: CellKind, dim_v: usize, hidden: usize, pose_dim: usize, init: &mut Init<'_>) -> Result<Self> {
        let names: &[&str] = match cell {
            CellKind::Gru => &["reset", "update", "candidate"],
            CellKind::Lstm => &["input", "forget", "cell", "output"],
        };
        let mut gates = Vec::new();
        for n in names {
            gates.push(Gate {
                x: Linear::new(&format!("decoder.{n}.x"), pose_dim, hidden, init)?,
                h: Linear::new(&format!("decoder.{n}.h"), hidden, hidden, init)?,
            });
        }
        Ok(MotionDecoder {
            cell,
            init: Linear::new("decoder.init", dim_v, hidden, init)?,
            gates,
            out: Linear::new("decoder.out", hidden, pose_dim, init)?,
        })
    }

    /// Rolls out `steps` poses `[B, steps, P]` from video embeddings
    /// `[B, dim_v]` and the last observed poses `[B, P]`.
    pub fn rollout(&self, video: &Tensor<F>, last_pose: &Tensor<F>, steps: usize) -> Result<Tensor<F>> {
        let mut h = self.init.forward(video)?.tanh();
        let mut c = Tensor::zeros(h.shape())?;
        let mut x = last_pose.clone();
        let mut poses = Vec::with_capacity(steps);
        for _ in 0..steps {
            match self.cell {
                CellKind::Gru => {
                    let g = &self.gates;
                    let r = g[0].pre(&x, &h)?.sigmoid();
                    let z = g[1].pre(&x, &h)?.sigmoid();
                    let n = g[2].x.forward(&x)?.add(&r.mul(&g[2].h.forward(&h)?)?)?.tanh();
                    // h' = n + z (h - n)
                    h = n.add(&z.mul(&h.sub(&n)?)?)?;
                }
                CellKind::Lstm => {
                    let g = &self.gates;
                    let i = g[0].pre(&x, &h)?.sigmoid();
                    let f = g[1].pre(&x, &h)?.sigmoid();
                    let cand = g[2].pre(&x, &h)?.tanh();
                    let o = g[3].pre(&x, &h)?.sigmoid();
                    c = f.mul(&c)?.add(&i.mul(&cand)?)?;
                    h = o.mul(&c.tanh())?;
                }
            }
            x = x.add(&self.out.forward(&h)?)?;
            poses.push(x.clone());
        }
        Ok(Tensor::stack(&poses)?.permute(&[1, 0, 2])?)
    }
}

impl<F: Real> Module<F> for MotionDecoder<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.init.visit(f);
        for g in &self.gates {
            g.x.visit(f);
            g.h.visit(f);
        }
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.init.visit_mut(f);
        for g in &mut self.gates {
            g.x.visit_mut(f);
            g.h.visit_mut(f);
        }
        self.out.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct MotionModel<F: Real> {
    pub encoder: HierarchicalEncoder<F>,
    pub decoder: MotionDecoder<F>,
}

impl<F: Real> MotionModel<F> {
    pub fn new(encoder: HierarchicalEncoder<F>, cell: CellKind, hidden: usize, num_joints: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg = encoder.config();
        let decoder = MotionDecoder::new(cell, cfg.dim_v, hidden, num_joints * 3, &mut Init::new(rng, cfg.init_std))?;
        Ok(MotionModel { encoder, decoder })
    }

    /// Future poses `[B, predict_frames, J, 3]` for equally long observations.
    pub fn predict(&self, observed: &[&SkeletonSequence], predict_frames: usize) -> Result<Tensor<F>> {
        let coords = coords_tensor(observed)?;
        let [b, t, j] = [coords.shape()[0], coords.shape()[1], coords.shape()[2]];
        let video = self.encoder.encode_coords(&coords)?.video;
        let last_rows: Vec<usize> = (0..b).map(|i| i * t + t - 1).collect();
        let last = coords.reshape(&[b * t, j * 3])?.select_rows(&last_rows)?;
        Ok(self.decoder.rollout(&video, &last, predict_frames)?.reshape(&[b, predict_frames, j, 3])?)
    }
}

impl<F: Real> Module<F> for MotionModel<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

/// Predictions for `observe`-frame windows, one per sequence.
pub fn predict_motion<F: Real>(model: &MotionModel<F>, seq: &SkeletonSequence, task: &MotionTask) -> Result<Vec<Point>> {
    task.check(seq.num_frames())?;
    let obs = seq.slice_frames(0, task.observe_frames)?;
    let pred = model.predict(&[&obs], task.predict_frames)?;
    Ok(pred.to_f64_vec().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Mean per-joint Euclidean distance of `[.., 3]` tensors.
pub fn euclidean_loss<F: Real>(pred: &Tensor<F>, gt: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(pred.sub(gt)?.square().sum_last()?.add_scalar(F::lit(1e-12)).sqrt().mean())
}

/// Mean per-joint position error in millimeters for coordinates in meters.
pub fn mpjpe(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Argument(format!("dimension mismatch: {} predicted joints, {} ground-truth joints", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Argument("no joints to compare".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt())
        .sum();
    Ok(1000.0 * total / pred.len() as f64)
}

/// The last observed frame repeated over the prediction horizon.
pub fn constant_pose(observed: &SkeletonSequence, predict_frames: usize) -> Vec<Point> {
    let last = observed.frame(observed.num_frames() - 1);
    (0..predict_frames).flat_map(|_| last.iter().copied()).collect()
}
