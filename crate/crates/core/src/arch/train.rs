//! Two-phase training loop: a one-cycle phase followed by a constant-rate
//! fine-tune phase, with per-epoch shuffling and Adam updates. Pooled
//! models draw mixed-task batches from all rows; multi-task models consume
//! one timestamp-aligned batch per task each step and sum the per-task
//! losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::model::{make_batch, Mode, Model, TaskBatch};
use crate::autodiff::{Adam, LrSchedule, Tape};
use crate::data::TaskDataset;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub start_div: f64,
    pub final_div: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            max_lr: 0.01,
            cycle_epochs: 20,
            fine_tune_epochs: 100,
            fine_tune_lr: 1e-4,
            batch_size: 512,
            warmup_fraction: 0.25,
            start_div: 25.0,
            final_div: 1e4,
            seed: 42,
        }
    }
}

impl TrainSettings {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::usage(format!(
                "batch size {} too small: batch norm needs at least 2 rows",
                self.batch_size
            )));
        }
        if self.cycle_epochs == 0 {
            return Err(Error::usage("training needs at least one cycle epoch".to_string()));
        }
        for (what, v) in [
            ("max learning rate", self.max_lr),
            ("fine-tune learning rate", self.fine_tune_lr),
            ("warmup start divisor", self.start_div),
            ("final divisor", self.final_div),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{what} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::usage(format!(
                "warmup fraction {} outside [0,1)",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss and full-validation loss, in the loss the
/// optimizer saw: plain MSE for single/pooled models, summed per-task MSE
/// for multi-task models.
#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

/// Trains the model in place over its datasets' train splits and reports
/// the loss trace. The row set a step consumes is decided by the model
/// family; see the batching helpers below.
pub fn train(
    model: &mut Model,
    datasets: &[TaskDataset],
    settings: &TrainSettings,
) -> Result<LossTrace> {
    settings.validate()?;
    check_datasets(model, datasets)?;

    let kind = model.config.kind;
    let n_train = if kind.is_pooled() {
        datasets.iter().map(|ds| ds.split.train.len()).sum::<usize>()
    } else {
        datasets[0].split.train.len()
    };
    if n_train == 0 {
        return Err(Error::data("empty train split".to_string()));
    }
    if settings.batch_size > n_train {
        return Err(Error::usage(format!(
            "batch size {} exceeds the {} training rows",
            settings.batch_size, n_train
        )));
    }

    let steps_per_epoch = batch_ranges(n_train, settings.batch_size).len();
    let mut schedule = LrSchedule::new(
        settings.max_lr,
        steps_per_epoch * settings.cycle_epochs,
        settings.fine_tune_lr,
    );
    schedule.warmup_fraction = settings.warmup_fraction;
    schedule.start_div = settings.start_div;
    schedule.final_div = settings.final_div;

    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut trace = LossTrace::default();
    let mut step = 0usize;

    // Pooled models shuffle (task, row) pairs; everything else shuffles
    // positions into the shared train split.
    let mut pooled_order: Vec<(usize, usize)> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    if kind.is_pooled() {
        for (t, ds) in datasets.iter().enumerate() {
            pooled_order.extend(ds.split.train.iter().map(|&r| (t, r)));
        }
    } else {
        order = (0..n_train).collect();
    }

    for _epoch in 0..settings.cycle_epochs + settings.fine_tune_epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        if kind.is_pooled() {
            pooled_order.shuffle(&mut rng);
        } else {
            order.shuffle(&mut rng);
        }
        for (start, end) in batch_ranges(n_train, settings.batch_size) {
            let batches: Vec<TaskBatch> = if kind.is_pooled() {
                vec![pooled_batch(datasets, &pooled_order[start..end])]
            } else if kind.is_multitask() {
                let rows: Vec<usize> =
                    order[start..end].iter().map(|&i| datasets[0].split.train[i]).collect();
                datasets.iter().map(|ds| make_batch(ds, &rows)).collect()
            } else {
                let rows: Vec<usize> =
                    order[start..end].iter().map(|&i| datasets[0].split.train[i]).collect();
                vec![make_batch(&datasets[0], &rows)]
            };

            let mut tape = Tape::new();
            let preds = model.forward(&mut tape, &batches, Mode::Train, &mut rng)?;
            let losses: Vec<_> = preds
                .iter()
                .zip(&batches)
                .map(|(&p, b)| tape.mse(p, &b.targets))
                .collect::<Result<_>>()?;
            let loss = if losses.len() == 1 {
                losses[0]
            } else {
                tape.sum_scalars(&losses)?
            };
            tape.backward(loss)?;
            model.params.zero_grads();
            tape.write_grads(&mut model.params)?;
            adam.step(&mut model.params, schedule.lr(step))?;

            epoch_loss += tape.value(loss)[0];
            epoch_steps += 1;
            step += 1;
        }
        trace.train.push(epoch_loss / epoch_steps as f64);
        trace.val.push(validation_loss(model, datasets)?);
    }
    Ok(trace)
}

/// Eval-mode loss over the validation split, in the same units as the
/// training loss.
pub fn validation_loss(model: &mut Model, datasets: &[TaskDataset]) -> Result<f64> {
    let kind = model.config.kind;
    if kind.is_multitask() {
        let rows = &datasets[0].split.val;
        let preds = model.predict(datasets, rows)?;
        let mut total = 0.0;
        for (ds, task_preds) in datasets.iter().zip(&preds) {
            total += mse_over(ds, rows, task_preds);
        }
        Ok(total)
    } else if kind.is_pooled() {
        let mut sq = 0.0;
        let mut n = 0usize;
        for ds in datasets {
            let preds = model.predict(std::slice::from_ref(ds), &ds.split.val)?;
            for (&r, &p) in ds.split.val.iter().zip(&preds[0]) {
                let d = p - ds.target[r];
                sq += d * d;
            }
            n += ds.split.val.len();
        }
        Ok(sq / n as f64)
    } else {
        let ds = &datasets[0];
        let preds = model.predict(std::slice::from_ref(ds), &ds.split.val)?;
        Ok(mse_over(ds, &ds.split.val, &preds[0]))
    }
}

fn mse_over(ds: &TaskDataset, rows: &[usize], preds: &[f64]) -> f64 {
    let sq: f64 = rows
        .iter()
        .zip(preds)
        .map(|(&r, &p)| {
            let d = p - ds.target[r];
            d * d
        })
        .sum();
    sq / rows.len() as f64
}

fn check_datasets(model: &Model, datasets: &[TaskDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::data("no datasets to train on".to_string()));
    }
    let d = model.config.n_features;
    for ds in datasets {
        if ds.n_features() != d {
            return Err(Error::data(format!(
                "task '{}' has {} features, model expects {d}",
                ds.task_name,
                ds.n_features()
            )));
        }
    }
    let kind = model.config.kind;
    if kind.is_multitask() {
        if datasets.len() != model.config.n_tasks {
            return Err(Error::usage(format!(
                "{kind} trains {} aligned tasks, got {} datasets",
                model.config.n_tasks,
                datasets.len()
            )));
        }
        for (t, ds) in datasets.iter().enumerate() {
            if ds.task_id != t {
                return Err(Error::data(format!(
                    "dataset {t} carries task id {}; pass datasets in task order",
                    ds.task_id
                )));
            }
            if ds.timestamps != datasets[0].timestamps {
                return Err(Error::data(format!(
                    "task '{}' is not timestamp-aligned with task '{}'",
                    ds.task_name, datasets[0].task_name
                )));
            }
            if ds.split.train != datasets[0].split.train || ds.split.val != datasets[0].split.val {
                return Err(Error::data(format!(
                    "task '{}' has a different split than task '{}'; prepare tasks together",
                    ds.task_name, datasets[0].task_name
                )));
            }
        }
    } else if !kind.is_pooled() && datasets.len() != 1 {
        return Err(Error::usage(format!(
            "{kind} trains a single task, got {} datasets",
            datasets.len()
        )));
    }
    Ok(())
}

/// Splits `n` rows into consecutive batches. A trailing remainder keeps its
/// own batch when it has at least 2 rows (batch norm needs 2); a single
/// leftover row is dropped for the epoch.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut s = 0;
    while s + batch <= n {
        out.push((s, s + batch));
        s += batch;
    }
    if n - s >= 2 {
        out.push((s, n));
    }
    out
}

fn pooled_batch(datasets: &[TaskDataset], items: &[(usize, usize)]) -> TaskBatch {
    let d = datasets[0].n_features();
    let mut batch = TaskBatch {
        rows: items.len(),
        features: Vec::with_capacity(items.len() * d),
        task_ids: Vec::with_capacity(items.len()),
        hours: Vec::with_capacity(items.len()),
        weeks: Vec::with_capacity(items.len()),
        days: Vec::with_capacity(items.len()),
        targets: Vec::with_capacity(items.len()),
    };
    for &(t, r) in items {
        let ds = &datasets[t];
        batch.features.extend_from_slice(&ds.features[r * d..(r + 1) * d]);
        let [hour, week, day] = ds.temporal[r];
        batch.hours.push(hour as usize);
        batch.weeks.push(week as usize - 1);
        batch.days.push(day as usize - 1);
        batch.targets.push(ds.target[r]);
        batch.task_ids.push(ds.task_id);
    }
    batch
}
