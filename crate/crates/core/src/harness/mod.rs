//! Orchestration: configuration, training, evaluation, checkpoints,
//! visualization and ablation experiments.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod experiments;
pub mod optim;
pub mod report;
pub mod train;
pub mod visualize;

pub use config::Config;
