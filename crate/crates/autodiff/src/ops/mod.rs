mod elementwise;
mod linalg;
pub(crate) mod nn;
mod reduce;
mod shape;
