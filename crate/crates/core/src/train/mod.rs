//! Pre-training and fine-tuning loops.

mod config;
mod finetune;
mod pretrain;
mod saved;

pub use config::{CellKind, TrainConfig};
pub use saved::TaskModel;
pub use pretrain::{check_pretrain_data, pretrain, PretrainModel, PretrainSession, StepLog};
pub use finetune::{
    evaluate_detection, evaluate_motion, evaluate_recognition, finetune_detection, finetune_motion, finetune_recognition,
    init_encoder, label_subset, motion_task_for, DetectionRun, FinetuneReport, MotionRun, RecognitionRun, Task,
    DETECTION_OVERLAP,
};
