//! Data pipeline: CSV ingestion, preprocessing (merge, interpolate,
//! time-shift, temporal extraction, split/standardize), synthetic
//! multi-task generation, and a binary dataset cache.

mod cache;
mod csv;
mod pipeline;
mod synthetic;

pub use cache::{load_cache, save_cache};
pub use csv::{load_csv, parse_timestamp};
pub use pipeline::{
    add_time_shifts, extract_temporal, interpolate_features, merge_on_timestamp,
    split_and_standardize,
};
pub use synthetic::{generate_series, generate_synthetic, Nonlinearity, SyntheticSpec};

use crate::{Error, Result};

/// One task's raw time series: strictly increasing UTC timestamps (unix
/// seconds), a row-major feature matrix, and the target column.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub task_name: String,
    pub timestamps: Vec<i64>,
    pub feature_names: Vec<String>,
    /// Row-major, `timestamps.len() × feature_names.len()`.
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

impl RawSeries {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.n_features() + col]
    }

    /// Uniform spacing between consecutive timestamps, in seconds.
    pub fn uniform_spacing(&self) -> Result<i64> {
        if self.n_rows() < 2 {
            return Err(Error::data(format!(
                "series '{}' needs at least 2 rows to have a spacing",
                self.task_name
            )));
        }
        let dt = self.timestamps[1] - self.timestamps[0];
        for w in self.timestamps.windows(2) {
            if w[1] - w[0] != dt {
                return Err(Error::data(format!(
                    "series '{}' is not uniformly spaced: gap of {}s after t={}, expected {}s",
                    self.task_name,
                    w[1] - w[0],
                    w[0],
                    dt
                )));
            }
        }
        Ok(dt)
    }
}

/// Row indices of the three disjoint splits; together they cover every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train-split standardization statistics (population stdev).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub feature_mean: Vec<f64>,
    pub feature_stdev: Vec<f64>,
    pub target_mean: f64,
    pub target_stdev: f64,
}

/// One task's fully prepared samples: standardized features and target,
/// temporal category ids, split membership, and the stats to invert the
/// standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub task_name: String,
    pub timestamps: Vec<i64>,
    pub feature_names: Vec<String>,
    /// Row-major, standardized.
    pub features: Vec<f64>,
    /// Per row: (hour 0–23, ISO week 1–53, day of month 1–31).
    pub temporal: Vec<[u32; 3]>,
    /// Standardized.
    pub target: Vec<f64>,
    pub split: SplitIndices,
    pub stats: ColumnStats,
}

impl TaskDataset {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn destandardize_target(&self, v: f64) -> f64 {
        v * self.stats.target_stdev + self.stats.target_mean
    }
}
