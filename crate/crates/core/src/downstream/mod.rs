//! Task heads and metrics: recognition, detection, motion prediction.

mod detection;
mod map;
mod motion;
mod recognition;

pub use detection::{
    centered_frames, detection_label, detection_window, frames_to_segments, label_segments, rasterize, DetectionModel,
};
pub use map::{average_precision, by_score_desc, match_segments, mean_average_precision, temporal_iou, ApMode, DetectionSegment};
pub use motion::{constant_pose, euclidean_loss, mpjpe, predict_motion, MotionDecoder, MotionModel, MotionTask};
pub use recognition::{accuracy, argmax, classify_action, cross_entropy, fuse_scores, softmax_rows, RecognitionModel};
