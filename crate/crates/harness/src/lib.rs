//! Command-line orchestration for `adcsd`: synthetic data, base fitting,
//! streamed adaptation, the seven-mode ablation, evaluation, and the
//! verification suites.

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod suites;

pub use error::{HarnessError, Result};
