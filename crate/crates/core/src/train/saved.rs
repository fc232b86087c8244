//! Fine-tuned models stored as checkpoints so they can be evaluated later.

use hiskel_autodiff::Real;

use super::{CellKind, Task, TrainConfig};
use crate::checkpoint::{param_blobs, restore_params, Checkpoint, CHECKPOINT_VERSION};
use crate::config::KvConfig;
use crate::downstream::{DetectionModel, MotionModel, RecognitionModel};
use crate::encoder::HierarchicalEncoder;
use crate::error::{Error, Result};
use crate::rng;

/// An encoder together with the head of one downstream task.
pub enum TaskModel<F: Real> {
    Recognition(RecognitionModel<F>),
    Detection(DetectionModel<F>),
    Motion(MotionModel<F>),
}

impl<F: Real> TaskModel<F> {
    pub fn task(&self) -> Task {
        match self {
            TaskModel::Recognition(_) => Task::Recognition,
            TaskModel::Detection(_) => Task::Detection,
            TaskModel::Motion(_) => Task::Motion,
        }
    }

    fn encoder(&self) -> &HierarchicalEncoder<F> {
        match self {
            TaskModel::Recognition(m) => &m.encoder,
            TaskModel::Detection(m) => &m.encoder,
            TaskModel::Motion(m) => &m.encoder,
        }
    }

    /// Classes, actions or joints, depending on the task.
    fn outputs(&self) -> usize {
        match self {
            TaskModel::Recognition(m) => m.num_classes(),
            TaskModel::Detection(m) => m.num_outputs() - 1,
            TaskModel::Motion(m) => m.decoder.out.d_out() / 3,
        }
    }

    /// Parameters plus the keys needed to rebuild the model; no optimizer state.
    pub fn checkpoint(&self, tc: &TrainConfig) -> Checkpoint {
        let mut kv = KvConfig::new();
        self.encoder().config().write_kv(&mut kv);
        tc.write_kv(&mut kv, "finetune");
        kv.set("task", self.task());
        kv.set("task.outputs", self.outputs());
        let params = match self {
            TaskModel::Recognition(m) => param_blobs(m),
            TaskModel::Detection(m) => param_blobs(m),
            TaskModel::Motion(m) => param_blobs(m),
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            scalar: F::NAME.to_string(),
            config_text: kv.render(),
            step: tc.steps,
            rng: Vec::new(),
            params,
            optimizer: Vec::new(),
        }
    }

    pub fn restore(ck: &Checkpoint) -> Result<Self> {
        let kv = ck.config()?;
        let task: Task = kv.get("task")?.ok_or_else(|| Error::Config("checkpoint holds no fine-tuned task head".into()))?;
        let outputs: usize = kv.get("task.outputs")?.ok_or_else(|| Error::Config("checkpoint lacks task.outputs".into()))?;
        let mut tc = TrainConfig::finetune();
        tc.read_kv(&kv, "finetune")?;
        let config = ck.model_config()?;
        // Every value is overwritten below; the stream only shapes the skeleton.
        let mut init = rng::stream(0, rng::INIT);
        let encoder = HierarchicalEncoder::new(config, &mut init)?;
        let mut model = match task {
            Task::Recognition => TaskModel::Recognition(RecognitionModel::new(encoder, outputs, &mut init)?),
            Task::Detection => TaskModel::Detection(DetectionModel::new(encoder, outputs, &mut init)?),
            Task::Motion => TaskModel::Motion(MotionModel::new(encoder, tc.decoder, tc.decoder_hidden, outputs, &mut init)?),
        };
        match &mut model {
            TaskModel::Recognition(m) => restore_params(m, ck, |_| true)?,
            TaskModel::Detection(m) => restore_params(m, ck, |_| true)?,
            TaskModel::Motion(m) => restore_params(m, ck, |_| true)?,
        };
        Ok(model)
    }

    pub fn decoder_cell(&self) -> Option<CellKind> {
        match self {
            TaskModel::Motion(m) => Some(m.decoder.cell),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;

    #[test]
    fn recognition_round_trip() {
        let mut init = rng::stream(4, rng::INIT);
        let enc = HierarchicalEncoder::<f64>::new(ModelConfig::tiny(), &mut init).unwrap();
        let model = TaskModel::Recognition(RecognitionModel::new(enc, 3, &mut init).unwrap());
        let ck = model.checkpoint(&TrainConfig::finetune());
        let back = TaskModel::<f64>::restore(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.task(), Task::Recognition);
        assert_eq!(back.outputs(), 3);
        assert_eq!(back.checkpoint(&TrainConfig::finetune()), ck);
    }

    #[test]
    fn motion_keeps_its_cell() {
        let mut init = rng::stream(5, rng::INIT);
        let enc = HierarchicalEncoder::<f64>::new(ModelConfig::tiny(), &mut init).unwrap();
        let model = TaskModel::Motion(MotionModel::new(enc, CellKind::Lstm, 8, 4, &mut init).unwrap());
        let mut tc = TrainConfig::finetune();
        tc.decoder = CellKind::Lstm;
        tc.decoder_hidden = 8;
        let back = TaskModel::<f64>::restore(&model.checkpoint(&tc)).unwrap();
        assert_eq!(back.decoder_cell(), Some(CellKind::Lstm));
        assert_eq!(back.outputs(), 4);
    }

    #[test]
    fn pretraining_checkpoints_are_rejected() {
        let s = crate::train::PretrainModel::<f64>::new(ModelConfig::tiny(), 1).unwrap();
        let mut kv = KvConfig::new();
        ModelConfig::tiny().write_kv(&mut kv);
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            scalar: "f64".into(),
            config_text: kv.render(),
            step: 0,
            rng: Vec::new(),
            params: param_blobs(&s),
            optimizer: Vec::new(),
        };
        assert!(matches!(TaskModel::<f64>::restore(&ck), Err(Error::Config(_))));
    }
}
