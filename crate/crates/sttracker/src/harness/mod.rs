//! Synthetic scenes, flat-file run configuration, and a small trainer used
//! by the examples and the end-to-end checks.

pub mod config;
pub mod scene;
pub mod train;

pub use config::{parse_config, RunConfig};
pub use scene::{generate_sequence, subsample_sequence, Motion, SceneSpec, SyntheticSequence};
pub use train::{train_toy, TrainConfig};
