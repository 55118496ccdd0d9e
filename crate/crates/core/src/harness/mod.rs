//! Experiment configuration, multi-seed runs and artifact emission.

pub mod compare;
pub mod config;
pub mod heatmap;
pub mod run;

pub use compare::compare;
pub use config::{ExperimentConfig, Mode};
pub use heatmap::emit_heatmap_data;
pub use run::{run, RunManifest};
