use hiskel_autodiff::{Parameter, Real, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{coords_tensor, HierarchicalEncoder};
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Module};

/// Encoder with a linear classifier on the video `[CLS]` output.
#[derive(Debug, Clone)]
pub struct RecognitionModel<F: Real> {
    pub encoder: HierarchicalEncoder<F>,
    pub head: Linear<F>,
}

impl<F: Real> RecognitionModel<F> {
    pub fn new(encoder: HierarchicalEncoder<F>, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        let cfg = encoder.config();
        let head = Linear::new("head.classifier", cfg.dim_v, num_classes, &mut Init::new(rng, cfg.init_std))?;
        Ok(RecognitionModel { encoder, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.d_out()
    }

    /// `[B, classes]` logits.
    pub fn logits(&self, batch: &[&SkeletonSequence]) -> Result<Tensor<F>> {
        let enc = self.encoder.encode_coords(&coords_tensor(batch)?)?;
        classify_action(&enc.video, &self.head)
    }
}

impl<F: Real> Module<F> for RecognitionModel<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.encoder.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.encoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// One affine map from video embeddings `[B, dim_v]` to class logits.
pub fn classify_action<F: Real>(video: &Tensor<F>, head: &Linear<F>) -> Result<Tensor<F>> {
    let d_in = head.weight.shape()[0];
    if video.shape().last() != Some(&d_in) {
        return Err(Error::Argument(format!("video embedding {:?} does not fit a head over {d_in} features", video.shape())));
    }
    head.forward(video)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of `[B, K]` logits against class ids.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    Ok(logits.log_softmax()?.pick_last(labels)?.mean().neg())
}

pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / pred.len() as f64
}

/// Elementwise mean of per-stream probability vectors.
pub fn fuse_scores(sets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = sets.first().ok_or_else(|| Error::Argument("no score sets to fuse".into()))?;
    if sets.iter().any(|s| s.len() != first.len()) {
        return Err(Error::Argument("score sets differ in length".into()));
    }
    let n = sets.len() as f64;
    Ok((0..first.len()).map(|k| sets.iter().map(|s| s[k]).sum::<f64>() / n).collect())
}
