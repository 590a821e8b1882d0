//! Standard-library companion to the core engine: synthetic datasets,
//! run configuration, binary checkpoints, CSV reports, SVG/PGM plots,
//! a numerical verification suite, and the command orchestration behind
//! the `esddpm` binary.
//!
//! The split is deliberate: everything numerical lives in the core
//! crate and runs without the standard library; everything that touches
//! files, clocks, or a terminal lives here.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod plot;
pub mod report;
pub mod runner;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use dataset::{make_dataset, Dataset, DatasetSpec};
pub use runner::RunError;
