//! Experiment configuration: a flat INI-style file (sections of `key =
//! value` lines) covering the data source, model list, and every training
//! hyperparameter, with the toolkit defaults filled in for anything
//! omitted. `parse` and `emit` round-trip exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::arch::ModelKind;
use crate::data::{parse_timestamp, Nonlinearity, SyntheticSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "csv" => Ok(DataSource::Csv),
            other => Err(Error::usage(format!(
                "unknown data source '{other}' (expected synthetic or csv)"
            ))),
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub csv_dir: PathBuf,
    /// Timestamp splitting train/val rows from the chronological test tail
    /// (CSV sources only; synthetic data uses its own test fraction).
    pub test_boundary: Option<i64>,
    /// Share of pre-boundary rows that train; the rest validate.
    pub train_fraction: f64,
    /// Upsampling factor between consecutive rows (1 = off).
    pub interpolation_factor: usize,
    /// Features that get ±1h shifted copies appended.
    pub shifted_features: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            csv_dir: PathBuf::from("data"),
            test_boundary: None,
            train_fraction: 0.8,
            interpolation_factor: 4,
            shifted_features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    /// Batch size for per-task and multi-task models.
    pub batch_size_mtl: usize,
    /// Batch size for models pooling every task's rows.
    pub batch_size_pooled: usize,
    pub warmup_fraction: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_lr: 0.01,
            cycle_epochs: 20,
            fine_tune_epochs: 100,
            fine_tune_lr: 1e-4,
            batch_size_mtl: 512,
            batch_size_pooled: 2048,
            warmup_fraction: 0.25,
            start_div: 25.0,
            final_div: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub subspaces: usize,
    pub hidden_dropout: f64,
    pub embedding_dropout: f64,
    pub leaky_slope: f64,
    pub task_embedding_dim: usize,
    pub hour_embedding_dim: usize,
    pub week_embedding_dim: usize,
    pub day_embedding_dim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            subspaces: 2,
            hidden_dropout: 0.5,
            embedding_dropout: 0.25,
            leaky_slope: 0.01,
            task_embedding_dim: 0,
            hour_embedding_dim: 0,
            week_embedding_dim: 0,
            day_embedding_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub models: Vec<ModelKind>,
    /// Concurrent training jobs; 0 means one per logical processor.
    pub workers: usize,
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub training: TrainingConfig,
    pub model: ModelSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            models: ModelKind::ALL.to_vec(),
            workers: 0,
            data: DataConfig::default(),
            synthetic: SyntheticSpec {
                n_tasks: 4,
                n_features: 4,
                relatedness: 0.8,
                nonlinearity: Nonlinearity::Linear,
                noise_stdev: 0.1,
                n_samples: 2000,
                test_fraction: 0.2,
                seed: 42,
            },
            training: TrainingConfig::default(),
            model: ModelSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses the INI text. Unknown sections or keys are usage errors, and
    /// every message carries its line number. The synthetic generator's seed
    /// always tracks the experiment seed.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Ok(env_seed) = std::env::var("MTL_FORGE_SEED") {
            cfg.seed = env_seed.parse().map_err(|_| {
                Error::usage(format!("MTL_FORGE_SEED is not an integer: '{env_seed}'"))
            })?;
        }
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::usage(format!("line {line_no}: unterminated section")))?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "experiment" | "data" | "synthetic" | "training" | "model"
                ) {
                    return Err(Error::usage(format!(
                        "line {line_no}: unknown section [{section}]"
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::usage(format!("line {line_no}: expected key = value, got '{line}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)
                .map_err(|e| Error::usage(format!("line {line_no}: {e}")))?;
        }
        cfg.synthetic.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("experiment", "seed") => self.seed = num(key, value)?,
            ("experiment", "out_dir") => self.out_dir = PathBuf::from(value),
            ("experiment", "models") => self.models = parse_model_list(value)?,
            ("experiment", "workers") => self.workers = num(key, value)?,

            ("data", "source") => self.data.source = value.parse()?,
            ("data", "csv_dir") => self.data.csv_dir = PathBuf::from(value),
            ("data", "test_boundary") => {
                let ts = parse_timestamp(value).ok_or_else(|| {
                    Error::usage(format!("test_boundary '{value}' is not a UTC timestamp"))
                })?;
                self.data.test_boundary = Some(ts);
            }
            ("data", "train_fraction") => self.data.train_fraction = num(key, value)?,
            ("data", "interpolation_factor") => self.data.interpolation_factor = num(key, value)?,
            ("data", "shifted_features") => {
                self.data.shifted_features = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }

            ("synthetic", "n_tasks") => self.synthetic.n_tasks = num(key, value)?,
            ("synthetic", "n_features") => self.synthetic.n_features = num(key, value)?,
            ("synthetic", "relatedness") => self.synthetic.relatedness = num(key, value)?,
            ("synthetic", "nonlinearity") => self.synthetic.nonlinearity = value.parse()?,
            ("synthetic", "noise_stdev") => self.synthetic.noise_stdev = num(key, value)?,
            ("synthetic", "n_samples") => self.synthetic.n_samples = num(key, value)?,
            ("synthetic", "test_fraction") => self.synthetic.test_fraction = num(key, value)?,

            ("training", "max_lr") => self.training.max_lr = num(key, value)?,
            ("training", "cycle_epochs") => self.training.cycle_epochs = num(key, value)?,
            ("training", "fine_tune_epochs") => self.training.fine_tune_epochs = num(key, value)?,
            ("training", "fine_tune_lr") => self.training.fine_tune_lr = num(key, value)?,
            ("training", "batch_size_mtl") => self.training.batch_size_mtl = num(key, value)?,
            ("training", "batch_size_pooled") => {
                self.training.batch_size_pooled = num(key, value)?
            }
            ("training", "warmup_fraction") => self.training.warmup_fraction = num(key, value)?,
            ("training", "start_div") => self.training.start_div = num(key, value)?,
            ("training", "final_div") => self.training.final_div = num(key, value)?,

            ("model", "subspaces") => self.model.subspaces = num(key, value)?,
            ("model", "hidden_dropout") => self.model.hidden_dropout = num(key, value)?,
            ("model", "embedding_dropout") => self.model.embedding_dropout = num(key, value)?,
            ("model", "leaky_slope") => self.model.leaky_slope = num(key, value)?,
            ("model", "task_embedding_dim") => self.model.task_embedding_dim = num(key, value)?,
            ("model", "hour_embedding_dim") => self.model.hour_embedding_dim = num(key, value)?,
            ("model", "week_embedding_dim") => self.model.week_embedding_dim = num(key, value)?,
            ("model", "day_embedding_dim") => self.model.day_embedding_dim = num(key, value)?,

            ("", k) => {
                return Err(Error::usage(format!("key '{k}' appears before any section")))
            }
            (s, k) => return Err(Error::usage(format!("unknown key '{k}' in section [{s}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::usage("config lists no models".to_string()));
        }
        let mut seen = Vec::new();
        for m in &self.models {
            if seen.contains(m) {
                return Err(Error::usage(format!("model '{m}' listed twice")));
            }
            seen.push(*m);
        }
        if !(0.0 < self.data.train_fraction && self.data.train_fraction < 1.0) {
            return Err(Error::usage(format!(
                "train_fraction must be in (0,1), got {}",
                self.data.train_fraction
            )));
        }
        if self.data.interpolation_factor == 0 {
            return Err(Error::usage("interpolation_factor must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Canonical INI text; `parse(emit(cfg))` reproduces `cfg` exactly.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let models: Vec<String> = self.models.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "models = {}", models.join(","));
        let _ = writeln!(s, "workers = {}", self.workers);

        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "source = {}", self.data.source);
        let _ = writeln!(s, "csv_dir = {}", self.data.csv_dir.display());
        if let Some(ts) = self.data.test_boundary {
            let _ = writeln!(s, "test_boundary = {}", format_timestamp(ts));
        }
        let _ = writeln!(s, "train_fraction = {}", self.data.train_fraction);
        let _ = writeln!(s, "interpolation_factor = {}", self.data.interpolation_factor);
        if !self.data.shifted_features.is_empty() {
            let _ = writeln!(s, "shifted_features = {}", self.data.shifted_features.join(","));
        }

        let _ = writeln!(s, "\n[synthetic]");
        let _ = writeln!(s, "n_tasks = {}", self.synthetic.n_tasks);
        let _ = writeln!(s, "n_features = {}", self.synthetic.n_features);
        let _ = writeln!(s, "relatedness = {}", self.synthetic.relatedness);
        let _ = writeln!(s, "nonlinearity = {}", self.synthetic.nonlinearity);
        let _ = writeln!(s, "noise_stdev = {}", self.synthetic.noise_stdev);
        let _ = writeln!(s, "n_samples = {}", self.synthetic.n_samples);
        let _ = writeln!(s, "test_fraction = {}", self.synthetic.test_fraction);

        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "max_lr = {}", self.training.max_lr);
        let _ = writeln!(s, "cycle_epochs = {}", self.training.cycle_epochs);
        let _ = writeln!(s, "fine_tune_epochs = {}", self.training.fine_tune_epochs);
        let _ = writeln!(s, "fine_tune_lr = {}", self.training.fine_tune_lr);
        let _ = writeln!(s, "batch_size_mtl = {}", self.training.batch_size_mtl);
        let _ = writeln!(s, "batch_size_pooled = {}", self.training.batch_size_pooled);
        let _ = writeln!(s, "warmup_fraction = {}", self.training.warmup_fraction);
        let _ = writeln!(s, "start_div = {}", self.training.start_div);
        let _ = writeln!(s, "final_div = {}", self.training.final_div);

        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "subspaces = {}", self.model.subspaces);
        let _ = writeln!(s, "hidden_dropout = {}", self.model.hidden_dropout);
        let _ = writeln!(s, "embedding_dropout = {}", self.model.embedding_dropout);
        let _ = writeln!(s, "leaky_slope = {}", self.model.leaky_slope);
        let _ = writeln!(s, "task_embedding_dim = {}", self.model.task_embedding_dim);
        let _ = writeln!(s, "hour_embedding_dim = {}", self.model.hour_embedding_dim);
        let _ = writeln!(s, "week_embedding_dim = {}", self.model.week_embedding_dim);
        let _ = writeln!(s, "day_embedding_dim = {}", self.model.day_embedding_dim);
        s
    }
}

/// Comma-separated model names (whitespace around entries ignored).
pub fn parse_model_list(value: &str) -> Result<Vec<ModelKind>> {
    value.split(',').map(|m| m.trim().parse()).collect()
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::usage(format!("cannot parse {key} value '{value}'")))
}

/// Unix seconds → `YYYY-MM-DDTHH:MM:SSZ` (inverse of `parse_timestamp`).
fn format_timestamp(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .expect("timestamp in representable range")
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}
