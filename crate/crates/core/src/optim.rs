//! Bias-corrected adaptive-moment optimizer with decoupled weight decay.

use hiskel_autodiff::{Parameter, Real};

use crate::error::{Error, Result};
use crate::nn::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// One update of a flat parameter block at step `t` (1-based).
pub fn adam_step<F: Real>(theta: &mut [F], grad: &[F], m: &mut [F], v: &mut [F], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let one = F::one();
    let c1 = one - F::lit(cfg.beta1.powi(t as i32));
    let c2 = one - F::lit(cfg.beta2.powi(t as i32));
    let lr = F::lit(cfg.lr);
    let decay = one - F::lit(cfg.lr * cfg.weight_decay);
    let eps = F::lit(cfg.eps);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] = theta[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<F> {
    pub name: String,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

/// Optimizer state for every parameter of one model, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub slots: Vec<Moments<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new<M: Module<F> + ?Sized>(config: AdamConfig, model: &M) -> Self {
        let mut slots = Vec::new();
        model.visit(&mut |p: &Parameter<F>| {
            slots.push(Moments { name: p.name().to_string(), m: vec![F::zero(); p.numel()], v: vec![F::zero(); p.numel()] })
        });
        Adam { config, step: 0, slots }
    }

    /// Applies accumulated gradients (missing ones count as zero) and clears them.
    pub fn step<M: Module<F> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let mut i = 0;
        let mut failure = None;
        let slots = &mut self.slots;
        model.visit_mut(&mut |p: &mut Parameter<F>| {
            if failure.is_some() {
                return;
            }
            let Some(slot) = slots.get_mut(i) else {
                failure = Some(format!("model has more parameters than the optimizer ({})", i));
                return;
            };
            i += 1;
            if slot.name != p.name() || slot.m.len() != p.numel() {
                failure = Some(format!("optimizer slot '{}' does not match parameter '{}'", slot.name, p.name()));
                return;
            }
            let grad = p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]);
            let mut theta = p.value().to_vec();
            adam_step(&mut theta, &grad, &mut slot.m, &mut slot.v, t, &cfg);
            if let Err(e) = p.set_value(theta) {
                failure = Some(e.to_string());
            }
            p.zero_grad();
        });
        if failure.is_none() && i != slots.len() {
            failure = Some(format!("model has {i} parameters, optimizer {}", slots.len()));
        }
        match failure {
            Some(msg) => Err(Error::Checkpoint(msg)),
            None => Ok(()),
        }
    }
}
