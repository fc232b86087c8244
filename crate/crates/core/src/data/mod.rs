mod clips;
mod io;
mod skeleton;
mod synthetic;

pub use clips::{clip_starts, window_clips, ClipSet};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION};
pub use skeleton::{
    bone_view, motion_view, resample, validate_topology, CoordBox, Point, SkeletonSequence, Stream, BACKGROUND,
    STICK_FIGURE,
};
pub use synthetic::{generate_synthetic, root_velocity, Layout, MotionClass, Nuisance, Side, SyntheticSpec};
