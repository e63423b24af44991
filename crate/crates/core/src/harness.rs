//! Experiment driver behind the CLI: prepares cached per-task datasets,
//! trains the configured model suite concurrently, scores checkpoints on
//! the test split, and renders the report artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::arch::{load_model, save_model, train, Model, ModelConfig, ModelKind, TrainSettings};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    add_time_shifts, generate_synthetic, interpolate_features, load_cache, load_csv,
    merge_on_timestamp, save_cache, split_and_standardize, TaskDataset,
};
use crate::stats::{compare_models, pearson, rmse, skill_score, SignificanceResult};
use crate::{Error, Result};

/// Fewer tasks than this and the significance tests are skipped: the exact
/// signed-rank test cannot reach p < 0.01 below six pairs.
pub const MIN_SIGNIFICANCE_TASKS: usize = 6;

/// Per-task RMSE matrix in original target units; the shape every
/// evaluation artifact is derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseTable {
    pub tasks: Vec<String>,
    /// Column order; always a subsequence of [`ModelKind::ALL`].
    pub models: Vec<ModelKind>,
    /// `rmse[m][t]`: model `m` on task `t`.
    pub rmse: Vec<Vec<f64>>,
}

/// Runs the data pipeline, writes one cache file per task plus the pairwise
/// target-correlation matrix, and prints per-task row counts.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<()> {
    let datasets = match cfg.data.source {
        DataSource::Synthetic => {
            generate_synthetic(&cfg.synthetic, cfg.data.train_fraction, cfg.seed)?
        }
        DataSource::Csv => prepare_csv(cfg)?,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    for ds in &datasets {
        save_cache(&cache_path(&cfg.out_dir, ds.task_id), std::slice::from_ref(ds))?;
        println!(
            "task {:02} {}: {} rows (train {}, val {}, test {})",
            ds.task_id,
            ds.task_name,
            ds.n_rows(),
            ds.split.train.len(),
            ds.split.val.len(),
            ds.split.test.len()
        );
    }
    write_pearson(&cfg.out_dir.join("pearson.csv"), &datasets)?;
    Ok(())
}

/// Trains one job per configured model — per task for the baseline — on a
/// worker pool, writing a checkpoint and a loss trace per job. Failed or
/// interrupted jobs leave only `.partial` files behind.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let datasets = load_cached(&cfg.out_dir)?;
    let jobs = plan_jobs(&cfg.models, datasets.len());
    std::fs::create_dir_all(cfg.out_dir.join("checkpoints"))?;
    let workers = if cfg.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.workers
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(String, Result<f64>)>();
    let mut first_err = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, jobs, datasets) = (&next, &abort, &jobs, &datasets);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let outcome = run_job(cfg, datasets, &jobs[i]);
                if outcome.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                if tx.send((jobs[i].name.clone(), outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (name, outcome) in rx {
            match outcome {
                Ok(val) => println!("trained {name} (final val loss {val:.6})"),
                Err(e) => {
                    eprintln!("job {name} failed: {e}");
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
    });
    first_err.map_or(Ok(()), Err)
}

/// Scores every configured model's checkpoint on the test split — or, with
/// `table`, an externally supplied RMSE matrix — and writes the evaluation
/// CSVs (RMSE table, skill scores, significance, boxplot data).
pub fn cmd_evaluate(cfg: &ExperimentConfig, table: Option<&Path>) -> Result<()> {
    let scores = match table {
        Some(path) => read_rmse_table(path)?,
        None => score_checkpoints(cfg)?,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_eval_outputs(&cfg.out_dir, &scores)
}

/// Renders the evaluation CSVs as a plain-text table — an asterisk marks
/// models whose per-task errors differ significantly from the baseline —
/// written to `report.txt` and stdout.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let table = read_rmse_table(&cfg.out_dir.join("rmse_table.csv"))?;
    let skills = read_skill_scores(&cfg.out_dir.join("skill_scores.csv"))?;
    let significant = read_significant_models(&cfg.out_dir.join("significance.csv"))?;

    let mut headers = vec!["task".to_string()];
    for kind in &table.models {
        let star = if significant.contains(&kind.to_string()) { "*" } else { "" };
        headers.push(format!("{kind}{star}"));
    }
    let mut rows = Vec::new();
    for (t, name) in table.tasks.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(table.rmse.iter().map(|col| format!("{:.4}", col[t])));
        rows.push(row);
    }
    let mut skill_row = vec!["skill".to_string()];
    for kind in &table.models {
        let s = skills
            .iter()
            .find(|(m, _)| m == &kind.to_string())
            .map(|&(_, v)| format!("{v:.4}"))
            .unwrap_or_default();
        skill_row.push(s);
    }
    rows.push(skill_row);

    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    render_row(&mut text, &headers, &widths);
    for row in &rows {
        render_row(&mut text, row, &widths);
    }
    print!("{text}");
    std::fs::write(cfg.out_dir.join("report.txt"), &text)?;
    Ok(())
}

fn render_row(out: &mut String, cells: &[String], widths: &[usize]) {
    for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
        if i == 0 {
            out.push_str(&format!("{cell:<w$}"));
        } else {
            out.push_str(&format!("  {cell:>w$}"));
        }
    }
    out.push('\n');
}

fn prepare_csv(cfg: &ExperimentConfig) -> Result<Vec<TaskDataset>> {
    let boundary = cfg.data.test_boundary.ok_or_else(|| {
        Error::usage("csv sources need data.test_boundary in the config".to_string())
    })?;
    let dir = &cfg.data.csv_dir;
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("cannot read csv directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::data(format!("no .csv files in {}", dir.display())));
    }
    let series = paths.iter().map(|p| load_csv(p)).collect::<Result<Vec<_>>>()?;
    let merged = merge_on_timestamp(series)?;
    merged
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let s = interpolate_features(s, cfg.data.interpolation_factor)?;
            let s = add_time_shifts(&s, &cfg.data.shifted_features)?;
            split_and_standardize(&s, id, boundary, cfg.data.train_fraction, cfg.seed)
        })
        .collect()
}

fn cache_path(out_dir: &Path, task_id: usize) -> PathBuf {
    out_dir.join(format!("task_{task_id:02}.bin"))
}

fn load_cached(out_dir: &Path) -> Result<Vec<TaskDataset>> {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(out_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("task_") && n.ends_with(".bin"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    if paths.is_empty() {
        return Err(Error::usage(format!(
            "no cached datasets in {} — run prepare first",
            out_dir.display()
        )));
    }
    let mut datasets = Vec::new();
    for p in &paths {
        datasets.extend(load_cache(p)?);
    }
    for (i, ds) in datasets.iter().enumerate() {
        if ds.task_id != i {
            return Err(Error::data(format!(
                "cache files out of order: expected task {i}, found {}",
                ds.task_id
            )));
        }
    }
    Ok(datasets)
}

fn write_pearson(path: &Path, datasets: &[TaskDataset]) -> Result<()> {
    let mut text = String::from("task");
    for ds in datasets {
        text.push(',');
        text.push_str(&ds.task_name);
    }
    text.push('\n');
    for a in datasets {
        text.push_str(&a.task_name);
        for b in datasets {
            let r = pearson(&a.target, &b.target)?;
            text.push_str(&format!(",{r:.6}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

struct Job {
    name: String,
    kind: ModelKind,
    /// Baseline jobs train on this single task; suite jobs see every task.
    task: Option<usize>,
}

fn plan_jobs(models: &[ModelKind], n_tasks: usize) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &kind in models {
        if kind == ModelKind::Baseline {
            for t in 0..n_tasks {
                jobs.push(Job { name: format!("baseline_task{t:02}"), kind, task: Some(t) });
            }
        } else {
            jobs.push(Job { name: kind.to_string(), kind, task: None });
        }
    }
    jobs
}

/// FNV-1a over the job name folded into the experiment seed, so every job
/// draws from its own deterministic stream no matter how jobs are scheduled.
fn job_seed(seed: u64, name: &str) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Trains one job and writes `loss_<job>.csv` plus `checkpoints/<job>.ckpt`,
/// staging both through `.partial` names so an interrupted job never leaves
/// a file that looks finished. Returns the final validation loss.
fn run_job(cfg: &ExperimentConfig, datasets: &[TaskDataset], job: &Job) -> Result<f64> {
    let slice: &[TaskDataset] = match job.task {
        Some(t) => std::slice::from_ref(&datasets[t]),
        None => datasets,
    };
    let seed = job_seed(cfg.seed, &job.name);
    let n_tasks = if job.kind == ModelKind::Baseline { 1 } else { datasets.len() };
    let mut mc = ModelConfig::new(job.kind, n_tasks, datasets[0].n_features());
    mc.subspaces = cfg.model.subspaces;
    mc.hidden_dropout = cfg.model.hidden_dropout;
    mc.embedding_dropout = cfg.model.embedding_dropout;
    mc.leaky_slope = cfg.model.leaky_slope;
    mc.task_embedding_dim = cfg.model.task_embedding_dim;
    mc.hour_embedding_dim = cfg.model.hour_embedding_dim;
    mc.week_embedding_dim = cfg.model.week_embedding_dim;
    mc.day_embedding_dim = cfg.model.day_embedding_dim;
    mc.seed = seed;
    let mut model = Model::build(mc)?;

    let settings = TrainSettings {
        max_lr: cfg.training.max_lr,
        cycle_epochs: cfg.training.cycle_epochs,
        fine_tune_epochs: cfg.training.fine_tune_epochs,
        fine_tune_lr: cfg.training.fine_tune_lr,
        batch_size: if job.kind.is_pooled() {
            cfg.training.batch_size_pooled
        } else {
            cfg.training.batch_size_mtl
        },
        warmup_fraction: cfg.training.warmup_fraction,
        start_div: cfg.training.start_div,
        final_div: cfg.training.final_div,
        seed: seed.wrapping_add(1),
    };
    let trace = train(&mut model, slice, &settings)?;

    let loss_path = cfg.out_dir.join(format!("loss_{}.csv", job.name));
    let staged = loss_path.with_extension("csv.partial");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&staged)?);
    writeln!(w, "epoch,train_loss,val_loss")?;
    for (i, (tr, va)) in trace.train.iter().zip(&trace.val).enumerate() {
        writeln!(w, "{},{tr:.12},{va:.12}", i + 1)?;
    }
    w.flush()?;
    drop(w);
    std::fs::rename(&staged, &loss_path)?;

    let ckpt = checkpoint_path(&cfg.out_dir, &job.name);
    let staged = ckpt.with_extension("ckpt.partial");
    save_model(&staged, &model)?;
    std::fs::rename(&staged, &ckpt)?;
    Ok(trace.val.last().copied().unwrap_or(f64::NAN))
}

fn checkpoint_path(out_dir: &Path, job_name: &str) -> PathBuf {
    out_dir.join("checkpoints").join(format!("{job_name}.ckpt"))
}

fn load_checkpoint(out_dir: &Path, job_name: &str, n_features: usize) -> Result<Model> {
    let path = checkpoint_path(out_dir, job_name);
    if !path.exists() {
        return Err(Error::data(format!(
            "missing checkpoint {} — run train first",
            path.display()
        )));
    }
    let model = load_model(&path)?;
    if model.config.n_features != n_features {
        return Err(Error::data(format!(
            "checkpoint {} expects {} features but the cached data has {}",
            path.display(),
            model.config.n_features,
            n_features
        )));
    }
    Ok(model)
}

fn score_checkpoints(cfg: &ExperimentConfig) -> Result<RmseTable> {
    let datasets = load_cached(&cfg.out_dir)?;
    let d = datasets[0].n_features();
    let models: Vec<ModelKind> =
        ModelKind::ALL.into_iter().filter(|k| cfg.models.contains(k)).collect();
    let mut table = RmseTable {
        tasks: datasets.iter().map(|ds| ds.task_name.clone()).collect(),
        models: models.clone(),
        rmse: Vec::new(),
    };
    for kind in models {
        let rmses = if kind == ModelKind::Baseline {
            let mut per_task = Vec::with_capacity(datasets.len());
            for ds in &datasets {
                let name = format!("baseline_task{:02}", ds.task_id);
                let mut model = load_checkpoint(&cfg.out_dir, &name, d)?;
                per_task.push(test_rmse_single(&mut model, ds)?);
            }
            per_task
        } else {
            let mut model = load_checkpoint(&cfg.out_dir, &kind.to_string(), d)?;
            if kind.is_multitask() {
                let rows = &datasets[0].split.test;
                let preds = model.predict(&datasets, rows)?;
                datasets
                    .iter()
                    .zip(&preds)
                    .map(|(ds, p)| original_units_rmse(ds, rows, p))
                    .collect::<Result<Vec<f64>>>()?
            } else {
                datasets
                    .iter()
                    .map(|ds| test_rmse_single(&mut model, ds))
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        table.rmse.push(rmses);
    }
    Ok(table)
}

fn test_rmse_single(model: &mut Model, ds: &TaskDataset) -> Result<f64> {
    let preds = model.predict(std::slice::from_ref(ds), &ds.split.test)?;
    original_units_rmse(ds, &ds.split.test, &preds[0])
}

/// RMSE between destandardized predictions and actuals for the given rows.
fn original_units_rmse(ds: &TaskDataset, rows: &[usize], preds_std: &[f64]) -> Result<f64> {
    let pred: Vec<f64> = preds_std.iter().map(|&v| ds.destandardize_target(v)).collect();
    let actual: Vec<f64> =
        rows.iter().map(|&r| ds.destandardize_target(ds.target[r])).collect();
    rmse(&pred, &actual)
}

/// Reads a per-task RMSE matrix: first column the task name, remaining
/// columns one per model, headers matched case-insensitively. Columns come
/// back in canonical [`ModelKind::ALL`] order.
pub fn read_rmse_table(path: &Path) -> Result<RmseTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot read rmse table {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::data(format!(
            "{}: an rmse table needs a task column and at least one model column",
            path.display()
        )));
    }
    let mut kinds: Vec<ModelKind> = Vec::new();
    for h in headers.iter().skip(1) {
        let kind = h.to_lowercase().parse::<ModelKind>()?;
        if kinds.contains(&kind) {
            return Err(Error::data(format!("{}: duplicate column '{h}'", path.display())));
        }
        kinds.push(kind);
    }
    let mut tasks = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for record in rdr.records() {
        let record = record?;
        tasks.push(record[0].to_string());
        for (j, v) in record.iter().skip(1).enumerate() {
            let x: f64 = v.parse().map_err(|_| {
                Error::data(format!("{}: bad rmse value '{v}'", path.display()))
            })?;
            cols[j].push(x);
        }
    }
    if tasks.is_empty() {
        return Err(Error::data(format!("{}: no task rows", path.display())));
    }
    let mut models = Vec::with_capacity(kinds.len());
    let mut rmse = Vec::with_capacity(kinds.len());
    for kind in ModelKind::ALL {
        if let Some(j) = kinds.iter().position(|&k| k == kind) {
            models.push(kind);
            rmse.push(std::mem::take(&mut cols[j]));
        }
    }
    Ok(RmseTable { tasks, models, rmse })
}

/// Writes `rmse_table.csv`, `boxplot_data.csv`, `skill_scores.csv`, and
/// `significance.csv`. Skill and significance compare against the baseline
/// column, which must be present; fewer than [`MIN_SIGNIFICANCE_TASKS`]
/// tasks skips the tests with a note.
pub fn write_eval_outputs(out_dir: &Path, table: &RmseTable) -> Result<()> {
    let baseline_col = table
        .models
        .iter()
        .position(|&k| k == ModelKind::Baseline)
        .ok_or_else(|| {
            Error::usage(
                "skill scores need baseline RMSEs as the reference — include the baseline model"
                    .to_string(),
            )
        })?;
    let baseline = &table.rmse[baseline_col];

    let mut text = String::from("task");
    for kind in &table.models {
        text.push_str(&format!(",{kind}"));
    }
    text.push('\n');
    for (t, name) in table.tasks.iter().enumerate() {
        text.push_str(name);
        for col in &table.rmse {
            text.push_str(&format!(",{:.6}", col[t]));
        }
        text.push('\n');
    }
    std::fs::write(out_dir.join("rmse_table.csv"), text)?;

    let mut text = String::from("model,task,rmse\n");
    for (kind, col) in table.models.iter().zip(&table.rmse) {
        for (name, v) in table.tasks.iter().zip(col) {
            text.push_str(&format!("{kind},{name},{v:.6}\n"));
        }
    }
    std::fs::write(out_dir.join("boxplot_data.csv"), text)?;

    let mut text = String::from("model,skill_score\n");
    for (kind, col) in table.models.iter().zip(&table.rmse) {
        let s = skill_score(col, baseline)?;
        text.push_str(&format!("{kind},{s:.6}\n"));
    }
    std::fs::write(out_dir.join("skill_scores.csv"), text)?;

    let mut text =
        String::from("model,test,statistic,p_value,significant,normality_p,fallback\n");
    let k = table.tasks.len();
    if k < MIN_SIGNIFICANCE_TASKS {
        println!("skipping significance tests: {k} tasks is fewer than {MIN_SIGNIFICANCE_TASKS}");
    } else {
        for (kind, col) in table.models.iter().zip(&table.rmse) {
            if *kind == ModelKind::Baseline {
                continue;
            }
            let r: SignificanceResult = compare_models(col, baseline)?;
            let normality = r.normality_p.map(|p| format!("{p:.6e}")).unwrap_or_default();
            text.push_str(&format!(
                "{kind},{},{:.6},{:.6e},{},{normality},{}\n",
                r.test, r.statistic, r.p_value, r.significant, r.fallback
            ));
        }
    }
    std::fs::write(out_dir.join("significance.csv"), text)?;
    Ok(())
}

fn read_skill_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let v: f64 = record[1]
            .parse()
            .map_err(|_| Error::data(format!("{}: bad skill value '{}'", path.display(), &record[1])))?;
        out.push((record[0].to_string(), v));
    }
    Ok(out)
}

fn read_significant_models(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if &record[4] == "true" {
            out.push(record[0].to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::data::Nonlinearity;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 11;
        cfg.out_dir = dir.to_path_buf();
        cfg.models = vec![ModelKind::Baseline, ModelKind::Csn];
        cfg.workers = 2;
        cfg.synthetic.n_tasks = 2;
        cfg.synthetic.n_features = 2;
        cfg.synthetic.n_samples = 220;
        cfg.synthetic.relatedness = 0.9;
        cfg.synthetic.nonlinearity = Nonlinearity::Linear;
        cfg.synthetic.seed = 11;
        cfg.training.cycle_epochs = 1;
        cfg.training.fine_tune_epochs = 0;
        cfg.training.batch_size_mtl = 32;
        cfg.training.batch_size_pooled = 32;
        cfg
    }

    #[test]
    fn prepare_train_evaluate_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());

        cmd_prepare(&cfg).unwrap();
        assert!(dir.path().join("task_00.bin").exists());
        assert!(dir.path().join("task_01.bin").exists());
        let pearson_text = std::fs::read_to_string(dir.path().join("pearson.csv")).unwrap();
        assert_eq!(pearson_text.lines().count(), 3, "{pearson_text}");

        cmd_train(&cfg).unwrap();
        for name in ["baseline_task00", "baseline_task01", "csn"] {
            assert!(checkpoint_path(dir.path(), name).exists(), "{name}");
            assert!(dir.path().join(format!("loss_{name}.csv")).exists(), "{name}");
        }
        let loss = std::fs::read_to_string(dir.path().join("loss_csn.csv")).unwrap();
        assert_eq!(loss.lines().next().unwrap(), "epoch,train_loss,val_loss");
        assert_eq!(loss.lines().count(), 2, "one epoch trained");

        cmd_evaluate(&cfg, None).unwrap();
        let table = read_rmse_table(&dir.path().join("rmse_table.csv")).unwrap();
        assert_eq!(table.models, vec![ModelKind::Baseline, ModelKind::Csn]);
        assert_eq!(table.tasks.len(), 2);
        assert!(table.rmse.iter().flatten().all(|v| v.is_finite()));

        let skills = read_skill_scores(&dir.path().join("skill_scores.csv")).unwrap();
        assert_eq!(skills[0].0, "baseline");
        assert_eq!(skills[0].1, 0.0, "baseline against itself is exactly zero skill");

        // two tasks is below the significance threshold: header only
        let sig = std::fs::read_to_string(dir.path().join("significance.csv")).unwrap();
        assert_eq!(sig.lines().count(), 1);

        cmd_report(&cfg).unwrap();
        let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report.contains("skill"), "{report}");
        assert!(report.contains("csn"), "{report}");
    }

    #[test]
    fn prepare_is_byte_identical_across_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_prepare(&cfg).unwrap();
        let first = std::fs::read(dir.path().join("task_00.bin")).unwrap();
        cmd_prepare(&cfg).unwrap();
        let second = std::fs::read(dir.path().join("task_00.bin")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn train_without_cache_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let err = cmd_train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("prepare"), "{err}");
    }

    #[test]
    fn evaluate_without_checkpoint_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_prepare(&cfg).unwrap();
        let err = cmd_evaluate(&cfg, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("baseline_task00.ckpt"), "{err}");
    }

    #[test]
    fn job_planning_expands_baseline_per_task() {
        let jobs = plan_jobs(&[ModelKind::Baseline, ModelKind::Ern], 4);
        let names: Vec<&str> = jobs.iter().map(|j| j.name.as_str()).collect();
        assert_eq!(
            names,
            ["baseline_task00", "baseline_task01", "baseline_task02", "baseline_task03", "ern"]
        );
        assert_eq!(jobs[2].task, Some(2));
        assert_eq!(jobs[4].task, None);
    }

    #[test]
    fn job_seeds_differ_by_name_and_are_stable() {
        let a = job_seed(42, "ern");
        let b = job_seed(42, "sn");
        let c = job_seed(43, "ern");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, job_seed(42, "ern"));
    }

    #[test]
    fn rmse_table_headers_are_case_insensitive_and_reordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        std::fs::write(
            &path,
            "ParkName,ERN,Baseline\npark_a,0.9,1.0\npark_b,1.1,1.2\n",
        )
        .unwrap();
        let table = read_rmse_table(&path).unwrap();
        assert_eq!(table.models, vec![ModelKind::Baseline, ModelKind::Ern]);
        assert_eq!(table.tasks, vec!["park_a", "park_b"]);
        assert_eq!(table.rmse[0], vec![1.0, 1.2]);
        assert_eq!(table.rmse[1], vec![0.9, 1.1]);
    }

    #[test]
    fn evaluate_from_table_runs_the_significance_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("external.csv");
        let mut text = String::from("task,baseline,ern\n");
        // seven tasks, ern consistently better: enough pairs to test
        for t in 0..7 {
            let b = 1.0 + 0.05 * t as f64;
            text.push_str(&format!("park{t},{b},{}\n", 0.8 * b));
        }
        std::fs::write(&path, text).unwrap();

        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        cmd_evaluate(&cfg, Some(&path)).unwrap();

        let skills = read_skill_scores(&dir.path().join("skill_scores.csv")).unwrap();
        let ern = skills.iter().find(|(m, _)| m == "ern").unwrap().1;
        assert!((ern - 0.2).abs() < 1e-9, "uniform 20% improvement, got {ern}");

        let sig = std::fs::read_to_string(dir.path().join("significance.csv")).unwrap();
        let row = sig.lines().nth(1).unwrap();
        assert!(row.starts_with("ern,"), "{row}");
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7, "{row}");
    }

    #[test]
    fn missing_baseline_column_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no_base.csv");
        std::fs::write(&path, "task,ern,sn\na,1.0,1.1\nb,0.9,1.0\n").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        let err = cmd_evaluate(&cfg, Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("baseline"), "{err}");
    }
}
