use std::fmt;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::pretext::{ContrastOptions, Levels, DEFAULT_TAU};

/// Recurrent cell of the motion decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            _ => Err(Error::Config(format!("unknown decoder cell '{s}' (gru or lstm)"))),
        }
    }
}

/// Optimization settings of one phase. Keys live under a phase prefix
/// (`pretrain.lr`, `finetune.lr`, ...) except `seed`, which is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub label_fraction: f64,
    pub levels: Levels,
    pub tau: f64,
    pub weight_decay: f64,
    pub normalize: bool,
    pub stop_gradient: bool,
    /// Reuse one batch and one set of pretext draws for every step.
    pub freeze_batch: bool,
    pub stratified: bool,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables intermediate evaluation during fine-tuning.
    pub eval_every: u64,
    /// Frames sampled per sequence and step for detection fine-tuning.
    pub frames_per_sequence: usize,
    pub decoder: CellKind,
    pub decoder_hidden: usize,
    /// Motion horizon overrides; 0 keeps 2 s observed / 0.4 s predicted.
    pub observe_frames: usize,
    pub predict_frames: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            steps: 500,
            seed: 0,
            label_fraction: 1.0,
            levels: Levels::ALL,
            tau: DEFAULT_TAU,
            weight_decay: 1e-4,
            normalize: true,
            stop_gradient: true,
            freeze_batch: false,
            stratified: true,
            checkpoint_every: 0,
            eval_every: 0,
            frames_per_sequence: 16,
            decoder: CellKind::Gru,
            decoder_hidden: 128,
            observe_frames: 0,
            predict_frames: 0,
        }
    }

    pub fn finetune() -> Self {
        TrainConfig { lr: 3e-4, ..Self::pretrain() }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.weight_decay)
    }

    pub fn contrast(&self) -> ContrastOptions {
        ContrastOptions { tau: self.tau, normalize: self.normalize, stop_gradient: self.stop_gradient }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return fail(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.frames_per_sequence == 0 || self.decoder_hidden == 0 {
            return fail("frames_per_sequence and decoder_hidden must be positive".into());
        }
        Ok(())
    }

    /// Extra checks for a pre-training run.
    pub fn validate_pretrain(&self) -> Result<()> {
        self.validate()?;
        if self.levels.is_empty() {
            return Err(Error::Config("pre-training needs at least one level (F, C or V)".into()));
        }
        if self.levels.video && self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 when the video level is active".into()));
        }
        Ok(())
    }

    pub fn read_kv(&mut self, kv: &KvConfig, prefix: &str) -> Result<()> {
        kv.read_into("seed", &mut self.seed)?;
        let k = |name: &str| format!("{prefix}.{name}");
        kv.read_into(&k("lr"), &mut self.lr)?;
        kv.read_into(&k("batch_size"), &mut self.batch_size)?;
        kv.read_into(&k("steps"), &mut self.steps)?;
        kv.read_into(&k("label_fraction"), &mut self.label_fraction)?;
        kv.read_into(&k("levels"), &mut self.levels)?;
        kv.read_into(&k("tau"), &mut self.tau)?;
        kv.read_into(&k("weight_decay"), &mut self.weight_decay)?;
        kv.read_into(&k("normalize"), &mut self.normalize)?;
        kv.read_into(&k("stop_gradient"), &mut self.stop_gradient)?;
        kv.read_into(&k("freeze_batch"), &mut self.freeze_batch)?;
        kv.read_into(&k("stratified"), &mut self.stratified)?;
        kv.read_into(&k("checkpoint_every"), &mut self.checkpoint_every)?;
        kv.read_into(&k("eval_every"), &mut self.eval_every)?;
        kv.read_into(&k("frames_per_sequence"), &mut self.frames_per_sequence)?;
        kv.read_into(&k("decoder"), &mut self.decoder)?;
        kv.read_into(&k("decoder_hidden"), &mut self.decoder_hidden)?;
        kv.read_into(&k("observe_frames"), &mut self.observe_frames)?;
        kv.read_into(&k("predict_frames"), &mut self.predict_frames)?;
        self.validate()
    }

    pub fn write_kv(&self, kv: &mut KvConfig, prefix: &str) {
        kv.set("seed", self.seed);
        let k = |name: &str| format!("{prefix}.{name}");
        kv.set(k("lr"), self.lr);
        kv.set(k("batch_size"), self.batch_size);
        kv.set(k("steps"), self.steps);
        kv.set(k("label_fraction"), self.label_fraction);
        kv.set(k("levels"), self.levels);
        kv.set(k("tau"), self.tau);
        kv.set(k("weight_decay"), self.weight_decay);
        kv.set(k("normalize"), self.normalize);
        kv.set(k("stop_gradient"), self.stop_gradient);
        kv.set(k("freeze_batch"), self.freeze_batch);
        kv.set(k("stratified"), self.stratified);
        kv.set(k("checkpoint_every"), self.checkpoint_every);
        kv.set(k("eval_every"), self.eval_every);
        kv.set(k("frames_per_sequence"), self.frames_per_sequence);
        kv.set(k("decoder"), self.decoder);
        kv.set(k("decoder_hidden"), self.decoder_hidden);
        kv.set(k("observe_frames"), self.observe_frames);
        kv.set(k("predict_frames"), self.predict_frames);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut t = TrainConfig::finetune();
        t.levels = "F+V".parse().unwrap();
        t.decoder = CellKind::Lstm;
        t.seed = 99;
        let mut kv = KvConfig::new();
        t.write_kv(&mut kv, "finetune");
        let parsed = KvConfig::parse(&kv.render()).unwrap();
        let mut back = TrainConfig::pretrain();
        back.read_kv(&parsed, "finetune").unwrap();
        assert_eq!(back, t);
        assert!(parsed.unused().is_empty());
    }

    #[test]
    fn invalid_values() {
        let mut t = TrainConfig::pretrain();
        t.label_fraction = 0.0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::pretrain();
        t.levels = Levels::NONE;
        assert!(t.validate_pretrain().is_err());
        t.levels = Levels::ALL;
        t.batch_size = 1;
        assert!(t.validate_pretrain().is_err());
    }
}
