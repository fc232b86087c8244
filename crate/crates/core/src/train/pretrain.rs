use std::time::Instant;

use hiskel_autodiff::{Parameter, Real};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::checkpoint::{optimizer_blobs, param_blobs, restore_optimizer, restore_params, Checkpoint, CHECKPOINT_VERSION};
use crate::config::KvConfig;
use crate::data::{CoordBox, SkeletonSequence};
use crate::encoder::{HierarchicalEncoder, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::optim::Adam;
use crate::pretext::{draw_pretext, mask_count, pretext_losses, LossValues, PretextDraws, PretextHeads, PretextLosses};
use crate::rng;

/// Encoder plus the pre-training heads.
#[derive(Debug, Clone)]
pub struct PretrainModel<F: Real> {
    pub encoder: HierarchicalEncoder<F>,
    pub heads: PretextHeads<F>,
}

impl<F: Real> PretrainModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut init = rng::stream(seed, rng::INIT);
        let encoder = HierarchicalEncoder::new(config, &mut init)?;
        let heads = PretextHeads::new(encoder.config(), &mut init)?;
        Ok(PretrainModel { encoder, heads })
    }
}

impl<F: Real> Module<F> for PretrainModel<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.encoder.visit(f);
        self.heads.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.encoder.visit_mut(f);
        self.heads.visit_mut(f);
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub losses: LossValues,
    pub seconds: f64,
}

/// Checks that every sequence can feed every active objective and that the
/// batch tensor is rectangular.
pub fn check_pretrain_data(data: &[SkeletonSequence], model: &ModelConfig, train: &TrainConfig) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::Argument("dataset is empty".into()))?;
    let (t, j) = (first.num_frames(), first.num_joints());
    if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.num_frames() != t || s.num_joints() != j) {
        return Err(Error::InvalidSequence(format!(
            "sequence {i} is {}x{} but sequence 0 is {t}x{j}; resample to a common length first",
            s.num_frames(),
            s.num_joints()
        )));
    }
    if train.levels.frame && mask_count(t, j) == 0 {
        return Err(Error::InsufficientLength { what: "joint cells for masking", needed: 4, got: t * j });
    }
    if train.levels.clip && t < model.window {
        return Err(Error::InsufficientLength { what: "frames for a clip crop", needed: model.window, got: t });
    }
    if train.levels.video || train.levels.clip {
        model.num_clips(t)?;
    }
    Ok(())
}

/// Resumable pre-training state.
pub struct PretrainSession<'d, F: Real> {
    pub model: PretrainModel<F>,
    pub optimizer: Adam<F>,
    model_config: ModelConfig,
    train: TrainConfig,
    data: &'d [SkeletonSequence],
    bounds: CoordBox,
    sampling: ChaCha8Rng,
    corruption: ChaCha8Rng,
    frozen: Option<(Vec<usize>, PretextDraws)>,
    step: u64,
}

impl<'d, F: Real> PretrainSession<'d, F> {
    pub fn new(data: &'d [SkeletonSequence], model_config: ModelConfig, train: TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train.validate_pretrain()?;
        check_pretrain_data(data, &model_config, &train)?;
        let model = PretrainModel::new(model_config.clone(), train.seed)?;
        let optimizer = Adam::new(train.adam(), &model);
        let mut s = PretrainSession {
            model,
            optimizer,
            bounds: CoordBox::of(data).expect("nonempty"),
            sampling: rng::stream(train.seed, rng::SAMPLING),
            corruption: rng::stream(train.seed, rng::CORRUPTION),
            model_config,
            train,
            data,
            frozen: None,
            step: 0,
        };
        if s.train.freeze_batch {
            let mut sampling = rng::stream(s.train.seed, "frozen-batch");
            let mut corruption = rng::stream(s.train.seed, "frozen-draws");
            let idx = s.sample_indices(&mut sampling);
            let draws = s.draws_for(&idx, &mut corruption)?;
            s.frozen = Some((idx, draws));
        }
        Ok(s)
    }

    /// Continues a run saved by [`PretrainSession::checkpoint`].
    pub fn resume(data: &'d [SkeletonSequence], ck: &Checkpoint) -> Result<Self> {
        let kv = ck.config()?;
        let model_config = ck.model_config()?;
        let mut train = TrainConfig::pretrain();
        train.read_kv(&kv, "pretrain")?;
        let mut s = Self::new(data, model_config, train)?;
        restore_params(&mut s.model, ck, |_| true)?;
        s.optimizer = restore_optimizer(&s.model, ck, s.optimizer.config)?;
        let pos = |name: &str| ck.rng_position(name).ok_or_else(|| Error::Checkpoint(format!("missing rng stream '{name}'")));
        s.sampling = rng::stream_at(s.train.seed, rng::SAMPLING, pos(rng::SAMPLING)?);
        s.corruption = rng::stream_at(s.train.seed, rng::CORRUPTION, pos(rng::CORRUPTION)?);
        s.step = ck.step;
        Ok(s)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Changes the step budget and checkpoint cadence, e.g. to extend a
    /// resumed run. Both are recorded in later checkpoints.
    pub fn set_schedule(&mut self, steps: u64, checkpoint_every: u64) {
        self.train.steps = steps;
        self.train.checkpoint_every = checkpoint_every;
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    fn sample_indices(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.data.len();
        index::sample(rng, n, self.train.batch_size.min(n)).into_vec()
    }

    fn draws_for(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<PretextDraws> {
        let batch: Vec<&SkeletonSequence> = idx.iter().map(|&i| &self.data[i]).collect();
        draw_pretext(&batch, &self.model_config, &self.bounds, self.train.levels, rng)
    }

    /// Loss graph of the next step without updating anything.
    pub fn losses(&mut self) -> Result<PretextLosses<F>> {
        let (idx, draws) = match &self.frozen {
            Some(f) => f.clone(),
            None => {
                let mut sampling = self.sampling.clone();
                let mut corruption = self.corruption.clone();
                let idx = self.sample_indices(&mut sampling);
                let draws = self.draws_for(&idx, &mut corruption)?;
                self.sampling = sampling;
                self.corruption = corruption;
                (idx, draws)
            }
        };
        let batch: Vec<&SkeletonSequence> = idx.iter().map(|&i| &self.data[i]).collect();
        pretext_losses(&self.model.encoder, &self.model.heads, &batch, &draws, self.train.levels, self.train.contrast())
    }

    /// Forward, backward and one optimizer update.
    pub fn step(&mut self) -> Result<StepLog> {
        let start = Instant::now();
        let losses = self.losses()?;
        let values = losses.values();
        if !values.total.is_finite() {
            let parts: Vec<String> =
                values.components().iter().filter_map(|(n, v)| v.map(|v| format!("{n}={v}"))).collect();
            return Err(Error::NonFinite { step: self.step + 1, detail: parts.join(" ") });
        }
        losses.total.backward()?;
        drop(losses);
        self.optimizer.step(&mut self.model)?;
        self.step += 1;
        Ok(StepLog { step: self.step, losses: values, seconds: start.elapsed().as_secs_f64() })
    }

    pub fn config_text(&self) -> String {
        let mut kv = KvConfig::new();
        self.model_config.write_kv(&mut kv);
        self.train.write_kv(&mut kv, "pretrain");
        kv.render()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            scalar: F::NAME.to_string(),
            config_text: self.config_text(),
            step: self.step,
            rng: vec![
                (rng::SAMPLING.to_string(), self.sampling.get_word_pos()),
                (rng::CORRUPTION.to_string(), self.corruption.get_word_pos()),
            ],
            params: param_blobs(&self.model),
            optimizer: optimizer_blobs(&self.optimizer),
        }
    }
}

/// Runs `train.steps` steps from scratch, calling `on_step` after each.
pub fn pretrain<F: Real>(
    data: &[SkeletonSequence],
    model_config: ModelConfig,
    train: TrainConfig,
    mut on_step: impl FnMut(&StepLog, &PretrainSession<'_, F>) -> Result<()>,
) -> Result<Checkpoint> {
    let steps = train.steps;
    let mut session = PretrainSession::<F>::new(data, model_config, train)?;
    while session.step_count() < steps {
        let log = session.step()?;
        on_step(&log, &session)?;
    }
    Ok(session.checkpoint())
}
