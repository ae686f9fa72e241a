//! Counting of indiscernible objects with a density branch feeding a
//! density-enhanced transformer encoder and a query-based point decoder.
//!
//! The crate is self-contained: a small reverse-mode tensor engine
//! ([`autograd`]) carries the model math, [`matching`] and [`loss`] define
//! the training objective, [`metrics`] scores counts, [`synth`] renders
//! camouflaged scenes with exact point labels, and [`dataset`] holds the file
//! formats, augmentation and tiling used by training and inference.

pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod infer;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod points;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use points::{Point, ScoredPoint};
pub use tensor::Tensor;
