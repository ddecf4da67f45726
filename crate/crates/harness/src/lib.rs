//! Harness around the `enact` clustering library: synthetic scenarios,
//! compression benchmarks, gradient checks, a toy training loop and
//! per-stage signal dumps.

pub mod bench;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod inspect;
pub mod synthetic;
pub mod train;

use std::path::PathBuf;

pub use bench::{run_compression_benchmark, CompressionReport};
pub use config::{ConfigOverrides, ScenarioConfig, TrainConfig};
pub use error::{HarnessError, Result};
pub use gradcheck::{run_gradient_check, GradCheckReport};
pub use synthetic::{generate_synthetic_batch, SyntheticBatch};
pub use train::{run_toy_training, TrainOutcome};

/// Environment variable naming the output directory.
pub const OUT_DIR_ENV: &str = "ENACT_OUT_DIR";

pub fn output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("./out"))
}
