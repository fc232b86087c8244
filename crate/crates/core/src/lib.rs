pub mod checkpoint;
pub mod config;
pub mod data;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod optim;
pub mod pretext;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use encoder::{HierarchicalEncoder, ModelConfig};
pub use train::{PretrainModel, PretrainSession, TrainConfig};

pub type Encoder64 = HierarchicalEncoder<f64>;
pub type Encoder32 = HierarchicalEncoder<f32>;
pub type PretrainModel64 = PretrainModel<f64>;
pub type PretrainModel32 = PretrainModel<f32>;
pub type PretrainSession64<'d> = PretrainSession<'d, f64>;
pub type PretrainSession32<'d> = PretrainSession<'d, f32>;
pub type RecognitionModel64 = downstream::RecognitionModel<f64>;
pub type RecognitionModel32 = downstream::RecognitionModel<f32>;
