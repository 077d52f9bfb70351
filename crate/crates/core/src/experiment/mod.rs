//! Configured training sweeps: config files, per-cell runs, checkpoints.

pub mod checkpoint;
pub mod config;
pub mod run;

pub use checkpoint::{Checkpoint, ModelState, RunState};
pub use config::{ExperimentConfig, Method};
pub use run::{cells, run_cell, Cell, CellOutcome, ExperimentData};
