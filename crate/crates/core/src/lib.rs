//! Convolutional smile recognition from scratch: hand-wired CNN primitives,
//! the conv/pool + dense network family, SGD-with-momentum training, greedy
//! per-parameter architecture selection, PGM/CSV data handling and
//! bit-exact checkpoints.

pub mod ckpt;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod modelsel;
pub mod network;
pub mod nnops;
pub mod parallel;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use network::{ArchitectureConfig, Mode, Network};
pub use nnops::Tensor;
pub use train::{TrainConfig, TrainReport};
