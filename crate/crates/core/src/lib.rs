//! Multi-task regression toolkit.
//!
//! Seven model families over a minimal reverse-mode autodiff engine:
//! a per-task baseline MLP, pooled MLPs with and without a task embedding,
//! hard parameter sharing, and three soft-sharing variants that couple
//! per-task towers through trainable mixing matrices at task, subspace, or
//! single-neuron granularity. Comes with a CSV/synthetic data pipeline and
//! the evaluation statistics (RMSE, skill score, Wilcoxon signed-rank,
//! Shapiro-Wilk, paired t-test) needed to compare them.

pub mod arch;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod harness;
pub mod stats;

mod error;

pub use error::{Error, Result};
