//! An oriented scene-text detector built from scratch: a small autodiff
//! tensor engine, deformable convolution and deformable position-sensitive
//! ROI pooling, an Inception-Text feature block, a two-stage detection
//! pipeline with instance masks, exact polygon post-processing, and a
//! deterministic synthetic dataset to train and evaluate on.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod inception;
pub mod layers;
pub mod ops;
pub mod rng;
pub mod tensor;

pub(crate) mod parallel;

pub use error::{Error, Result};
pub use graph::{Graph, TensorId};
pub use tensor::{Scalar, Tensor};
