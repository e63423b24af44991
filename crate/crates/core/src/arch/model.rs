//! The seven regression models. Three are single-trunk MLPs (per-task
//! baseline, pooled without task information, pooled with a task
//! embedding), one shares a trunk with per-task heads, and three are
//! per-task towers coupled by mixing units at layer, subspace, or neuron
//! granularity. All share the same hidden-layer stack: linear →
//! leaky-ReLU → batch-norm → dropout.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::alpha::{chunk_width, init_alpha, init_beta, AlphaKind};
use crate::arch::plan::{build_layer_plan, embedding_dim};
use crate::autodiff::{xavier_init, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::data::TaskDataset;
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const HOUR_CARD: usize = 24;
const WEEK_CARD: usize = 53;
const DAY_CARD: usize = 31;
/// Rows per forward pass when predicting large splits.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Independent MLP for a single task.
    Baseline,
    /// One MLP pooled over every task's rows, no task information.
    Mlpnp,
    /// Pooled MLP with a task-id embedding appended to the input.
    Mlpwp,
    /// Hard sharing: one trunk, per-task heads of widths 5 and 1.
    Hps,
    /// Per-task towers mixed per layer (cross-stitch).
    Csn,
    /// Per-task towers mixed per subspace, skip read-out (sluice).
    Sn,
    /// Per-task towers mixed per neuron, skip read-out.
    Ern,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Baseline,
        ModelKind::Mlpnp,
        ModelKind::Mlpwp,
        ModelKind::Hps,
        ModelKind::Csn,
        ModelKind::Sn,
        ModelKind::Ern,
    ];

    /// Trains on all tasks' rows mixed into one batch stream.
    pub fn is_pooled(self) -> bool {
        matches!(self, ModelKind::Mlpnp | ModelKind::Mlpwp)
    }

    /// Consumes one aligned batch per task each step.
    pub fn is_multitask(self) -> bool {
        matches!(self, ModelKind::Hps | ModelKind::Csn | ModelKind::Sn | ModelKind::Ern)
    }

    fn alpha_kind(self) -> Option<AlphaKind> {
        match self {
            ModelKind::Csn => Some(AlphaKind::CrossStitch),
            ModelKind::Sn => Some(AlphaKind::Sluice),
            ModelKind::Ern => Some(AlphaKind::Ern),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Mlpnp => "mlpnp",
            ModelKind::Mlpwp => "mlpwp",
            ModelKind::Hps => "hps",
            ModelKind::Csn => "csn",
            ModelKind::Sn => "sn",
            ModelKind::Ern => "ern",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "mlpnp" => Ok(ModelKind::Mlpnp),
            "mlpwp" => Ok(ModelKind::Mlpwp),
            "hps" => Ok(ModelKind::Hps),
            "csn" => Ok(ModelKind::Csn),
            "sn" => Ok(ModelKind::Sn),
            "ern" => Ok(ModelKind::Ern),
            other => Err(Error::usage(format!(
                "unknown model '{other}' (expected baseline, mlpnp, mlpwp, hps, csn, sn, or ern)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n_tasks: usize,
    /// Numeric input features; temporal categories enter via embeddings.
    pub n_features: usize,
    /// Mixing granularity per layer for the sluice network.
    pub subspaces: usize,
    pub hidden_dropout: f64,
    pub embedding_dropout: f64,
    pub leaky_slope: f64,
    /// Embedding widths; 0 means the min(50, ⌈cardinality/2⌉) heuristic.
    pub task_embedding_dim: usize,
    pub hour_embedding_dim: usize,
    pub week_embedding_dim: usize,
    pub day_embedding_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, n_tasks: usize, n_features: usize) -> Self {
        ModelConfig {
            kind,
            n_tasks,
            n_features,
            subspaces: 2,
            hidden_dropout: 0.5,
            embedding_dropout: 0.25,
            leaky_slope: 0.01,
            task_embedding_dim: 0,
            hour_embedding_dim: 0,
            week_embedding_dim: 0,
            day_embedding_dim: 0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::usage("model needs at least one task".to_string()));
        }
        if self.n_features == 0 {
            return Err(Error::usage("model needs at least one input feature".to_string()));
        }
        if self.kind == ModelKind::Baseline && self.n_tasks != 1 {
            return Err(Error::usage(format!(
                "baseline models a single task, got {}",
                self.n_tasks
            )));
        }
        if self.kind == ModelKind::Sn && self.subspaces == 0 {
            return Err(Error::usage("subspace count must be at least 1".to_string()));
        }
        for (what, p) in [
            ("hidden dropout", self.hidden_dropout),
            ("embedding dropout", self.embedding_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::usage(format!("{what} {p} outside [0,1)")));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return Err(Error::usage(format!("bad leaky slope {}", self.leaky_slope)));
        }
        Ok(())
    }

    fn hour_dim(&self) -> usize {
        pick_dim(self.hour_embedding_dim, HOUR_CARD)
    }

    fn week_dim(&self) -> usize {
        pick_dim(self.week_embedding_dim, WEEK_CARD)
    }

    fn day_dim(&self) -> usize {
        pick_dim(self.day_embedding_dim, DAY_CARD)
    }

    fn task_dim(&self) -> usize {
        pick_dim(self.task_embedding_dim, self.n_tasks)
    }

    /// Width of the first hidden layer's input: numeric features plus all
    /// embedding columns.
    fn input_width(&self) -> usize {
        let mut w = self.n_features + self.hour_dim() + self.week_dim() + self.day_dim();
        if self.kind == ModelKind::Mlpwp {
            w += self.task_dim();
        }
        w
    }
}

fn pick_dim(configured: usize, cardinality: usize) -> usize {
    if configured > 0 {
        configured
    } else {
        embedding_dim(cardinality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running batch-norm statistics for one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct HiddenLayer {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    /// Index into `Model::bn_running`.
    bn: usize,
}

#[derive(Debug, Clone, Copy)]
struct OutputLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EmbeddingSet {
    hour: ParamId,
    week: ParamId,
    day: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    hidden: HiddenLayer,
    out: OutputLayer,
}

#[derive(Debug, Clone)]
struct Tower {
    emb: EmbeddingSet,
    layers: Vec<HiddenLayer>,
}

#[derive(Debug, Clone)]
enum Readout {
    /// Linear layer per task on the last mixed activation (cross-stitch).
    PerTask(Vec<OutputLayer>),
    /// Bias-free read-out over all layers' skip-concatenated activations.
    Beta(Vec<ParamId>),
}

#[derive(Debug, Clone)]
enum Body {
    Trunk {
        emb: EmbeddingSet,
        task_emb: Option<ParamId>,
        layers: Vec<HiddenLayer>,
        out: OutputLayer,
    },
    Hps {
        emb: EmbeddingSet,
        layers: Vec<HiddenLayer>,
        heads: Vec<Head>,
    },
    Towers {
        towers: Vec<Tower>,
        alphas: Vec<ParamId>,
        readout: Readout,
    },
}

/// One minibatch for one task (or, for pooled models, a mixture of tasks).
/// Week and day are already shifted to 0-based table indices.
#[derive(Debug, Clone)]
pub struct TaskBatch {
    pub rows: usize,
    /// Row-major `rows × n_features`, standardized.
    pub features: Vec<f64>,
    pub task_ids: Vec<usize>,
    pub hours: Vec<usize>,
    pub weeks: Vec<usize>,
    pub days: Vec<usize>,
    /// Standardized regression targets.
    pub targets: Vec<f64>,
}

/// Assembles the given dataset rows into a batch.
pub fn make_batch(ds: &TaskDataset, rows: &[usize]) -> TaskBatch {
    let d = ds.n_features();
    let mut batch = TaskBatch {
        rows: rows.len(),
        features: Vec::with_capacity(rows.len() * d),
        task_ids: Vec::with_capacity(rows.len()),
        hours: Vec::with_capacity(rows.len()),
        weeks: Vec::with_capacity(rows.len()),
        days: Vec::with_capacity(rows.len()),
        targets: Vec::with_capacity(rows.len()),
    };
    for &r in rows {
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

/// Concatenates per-task batches into one pooled batch.
pub fn merge_batches(parts: &[TaskBatch]) -> TaskBatch {
    let mut merged = TaskBatch {
        rows: 0,
        features: Vec::new(),
        task_ids: Vec::new(),
        hours: Vec::new(),
        weeks: Vec::new(),
        days: Vec::new(),
        targets: Vec::new(),
    };
    for p in parts {
        merged.rows += p.rows;
        merged.features.extend_from_slice(&p.features);
        merged.task_ids.extend_from_slice(&p.task_ids);
        merged.hours.extend_from_slice(&p.hours);
        merged.weeks.extend_from_slice(&p.weeks);
        merged.days.extend_from_slice(&p.days);
        merged.targets.extend_from_slice(&p.targets);
    }
    merged
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// Hidden-layer widths shared by every trunk/tower.
    pub widths: Vec<usize>,
    pub params: ParamStore,
    pub bn_running: Vec<BnState>,
    body: Body,
}

impl Model {
    /// Builds the architecture with freshly initialized parameters and the
    /// standard layer plan. For a fixed config this is fully deterministic,
    /// including parameter order.
    pub fn build(config: ModelConfig) -> Result<Model> {
        let widths = build_layer_plan(config.n_features)?;
        Model::build_with_widths(config, widths)
    }

    /// [`Model::build`] with an explicit hidden-layer plan instead of the
    /// standard one; useful for desk-size instances.
    pub fn build_with_widths(config: ModelConfig, widths: Vec<usize>) -> Result<Model> {
        config.validate()?;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::usage(format!("bad layer plan {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let in_width = config.input_width();
        let last = *widths.last().expect("layer plan is never empty");

        let body = match config.kind {
            ModelKind::Baseline | ModelKind::Mlpnp | ModelKind::Mlpwp => {
                let emb = add_embeddings("", &config, &mut params, &mut rng);
                let task_emb = (config.kind == ModelKind::Mlpwp).then(|| {
                    params.add(
                        "task_embedding",
                        xavier_init(config.n_tasks, config.task_dim(), &mut rng),
                    )
                });
                let layers = add_stack("", in_width, &widths, &mut params, &mut bn, &mut rng);
                let out = add_output("", last, &mut params, &mut rng);
                Body::Trunk { emb, task_emb, layers, out }
            }
            ModelKind::Hps => {
                let emb = add_embeddings("", &config, &mut params, &mut rng);
                let layers = add_stack("", in_width, &widths, &mut params, &mut bn, &mut rng);
                let heads = (0..config.n_tasks)
                    .map(|t| {
                        let prefix = format!("head{t}_");
                        let hidden = add_hidden(&prefix, 0, last, 5, &mut params, &mut bn, &mut rng);
                        let out = add_output(&prefix, 5, &mut params, &mut rng);
                        Head { hidden, out }
                    })
                    .collect();
                Body::Hps { emb, layers, heads }
            }
            ModelKind::Csn | ModelKind::Sn | ModelKind::Ern => {
                let towers = (0..config.n_tasks)
                    .map(|t| {
                        let prefix = format!("t{t}_");
                        let emb = add_embeddings(&prefix, &config, &mut params, &mut rng);
                        let layers =
                            add_stack(&prefix, in_width, &widths, &mut params, &mut bn, &mut rng);
                        Tower { emb, layers }
                    })
                    .collect();
                let kind = config.kind.alpha_kind().expect("tower models have a mixing kind");
                let mut alphas = Vec::with_capacity(widths.len());
                for (l, &w) in widths.iter().enumerate() {
                    let a = init_alpha(kind, &vec![w; config.n_tasks], config.subspaces)?;
                    alphas.push(params.add(format!("alpha{l}"), a));
                }
                let readout = if config.kind == ModelKind::Csn {
                    Readout::PerTask(
                        (0..config.n_tasks)
                            .map(|t| add_output(&format!("t{t}_"), last, &mut params, &mut rng))
                            .collect(),
                    )
                } else {
                    Readout::Beta(
                        (0..config.n_tasks)
                            .map(|t| params.add(format!("t{t}_beta"), init_beta(&widths)))
                            .collect(),
                    )
                };
                Body::Towers { towers, alphas, readout }
            }
        };

        Ok(Model { config, widths, params, bn_running: bn, body })
    }

    /// Runs the model on one batch (trunk models) or one aligned batch per
    /// task (shared-trunk and tower models), returning one prediction node
    /// per batch. Train mode records batch-norm in batch-statistics form and
    /// applies dropout; eval mode uses running statistics and no dropout.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        batches: &[TaskBatch],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NodeId>> {
        if batches.is_empty() {
            return Err(Error::usage("forward needs at least one batch".to_string()));
        }
        let cfg = self.config.clone();
        match &self.body {
            Body::Trunk { emb, task_emb, layers, out } => {
                if batches.len() != 1 {
                    return Err(Error::usage(format!(
                        "{} takes a single batch, got {}",
                        cfg.kind,
                        batches.len()
                    )));
                }
                let batch = &batches[0];
                if task_emb.is_some() {
                    check_task_ids(batch, cfg.n_tasks)?;
                }
                let mut h = embed_input(
                    tape,
                    &self.params,
                    *emb,
                    *task_emb,
                    batch,
                    &cfg,
                    mode,
                    rng,
                )?;
                for layer in layers {
                    h = stack_layer(
                        tape,
                        &self.params,
                        &mut self.bn_running,
                        *layer,
                        h,
                        &cfg,
                        mode,
                        rng,
                    )?;
                }
                Ok(vec![linear_out(tape, &self.params, *out, h)?])
            }
            Body::Hps { emb, layers, heads } => {
                check_aligned(batches, cfg.n_tasks, false)?;
                let mut preds = Vec::with_capacity(batches.len());
                for (t, batch) in batches.iter().enumerate() {
                    let mut h =
                        embed_input(tape, &self.params, *emb, None, batch, &cfg, mode, rng)?;
                    for layer in layers {
                        h = stack_layer(
                            tape,
                            &self.params,
                            &mut self.bn_running,
                            *layer,
                            h,
                            &cfg,
                            mode,
                            rng,
                        )?;
                    }
                    let head = heads[t];
                    h = stack_layer(
                        tape,
                        &self.params,
                        &mut self.bn_running,
                        head.hidden,
                        h,
                        &cfg,
                        mode,
                        rng,
                    )?;
                    preds.push(linear_out(tape, &self.params, head.out, h)?);
                }
                Ok(preds)
            }
            Body::Towers { towers, alphas, readout } => {
                check_aligned(batches, cfg.n_tasks, true)?;
                let n_tasks = towers.len();
                let kind = cfg.kind.alpha_kind().expect("tower models have a mixing kind");
                let mut cur = Vec::with_capacity(n_tasks);
                for (tower, batch) in towers.iter().zip(batches) {
                    cur.push(embed_input(
                        tape,
                        &self.params,
                        tower.emb,
                        None,
                        batch,
                        &cfg,
                        mode,
                        rng,
                    )?);
                }
                let mut skips: Vec<Vec<NodeId>> = vec![Vec::new(); n_tasks];
                for (l, &width) in self.widths.iter().enumerate() {
                    for (t, tower) in towers.iter().enumerate() {
                        cur[t] = stack_layer(
                            tape,
                            &self.params,
                            &mut self.bn_running,
                            tower.layers[l],
                            cur[t],
                            &cfg,
                            mode,
                            rng,
                        )?;
                    }
                    let stacked = tape.concat_cols(&cur)?;
                    let alpha = tape.param(&self.params, alphas[l])?;
                    let chunk = chunk_width(kind, width, cfg.subspaces);
                    let mixed = tape.block_mix(stacked, alpha, chunk)?;
                    for t in 0..n_tasks {
                        cur[t] = tape.slice_cols(mixed, t * width, width)?;
                        skips[t].push(cur[t]);
                    }
                }
                let mut preds = Vec::with_capacity(n_tasks);
                match readout {
                    Readout::PerTask(outs) => {
                        for (t, out) in outs.iter().enumerate() {
                            preds.push(linear_out(tape, &self.params, *out, cur[t])?);
                        }
                    }
                    Readout::Beta(betas) => {
                        for (t, beta) in betas.iter().enumerate() {
                            let skip = tape.concat_cols(&skips[t])?;
                            let b = tape.param(&self.params, *beta)?;
                            preds.push(tape.matmul(skip, b)?);
                        }
                    }
                }
                Ok(preds)
            }
        }
    }

    /// Eval-mode forward over prepared batches: one prediction vector per
    /// forward head (one per task for multi-task families, one otherwise).
    pub fn predict_batches(&mut self, batches: &[TaskBatch]) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let ids = self.forward(&mut tape, batches, Mode::Eval, &mut rng)?;
        Ok(ids.iter().map(|&id| tape.value(id).to_vec()).collect())
    }

    /// Eval-mode predictions (standardized target space) for the given rows.
    /// Trunk models predict each dataset independently; shared-trunk and
    /// tower models require one dataset per task, aligned on the same rows.
    pub fn predict(&mut self, datasets: &[TaskDataset], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        if !self.config.kind.is_multitask() {
            let mut out = Vec::with_capacity(datasets.len());
            for ds in datasets {
                let mut preds = Vec::with_capacity(rows.len());
                for chunk in rows.chunks(EVAL_CHUNK) {
                    let batch = make_batch(ds, chunk);
                    let mut tape = Tape::new();
                    let ids = self.forward(&mut tape, std::slice::from_ref(&batch), Mode::Eval, &mut rng)?;
                    preds.extend_from_slice(tape.value(ids[0]));
                }
                out.push(preds);
            }
            return Ok(out);
        }
        if datasets.len() != self.config.n_tasks {
            return Err(Error::usage(format!(
                "{} predicts {} aligned tasks, got {} datasets",
                self.config.kind,
                self.config.n_tasks,
                datasets.len()
            )));
        }
        let mut out = vec![Vec::with_capacity(rows.len()); datasets.len()];
        for chunk in rows.chunks(EVAL_CHUNK) {
            let batches: Vec<TaskBatch> = datasets.iter().map(|ds| make_batch(ds, chunk)).collect();
            let mut tape = Tape::new();
            let ids = self.forward(&mut tape, &batches, Mode::Eval, &mut rng)?;
            for (t, id) in ids.iter().enumerate() {
                out[t].extend_from_slice(tape.value(*id));
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }
}

fn check_task_ids(batch: &TaskBatch, n_tasks: usize) -> Result<()> {
    if let Some(&bad) = batch.task_ids.iter().find(|&&id| id >= n_tasks) {
        return Err(Error::data(format!("unknown task id {bad} (have {n_tasks} tasks)")));
    }
    Ok(())
}

fn check_aligned(batches: &[TaskBatch], n_tasks: usize, equal_rows: bool) -> Result<()> {
    if batches.len() != n_tasks {
        return Err(Error::usage(format!(
            "expected one batch per task ({n_tasks}), got {}",
            batches.len()
        )));
    }
    for (t, batch) in batches.iter().enumerate() {
        check_task_ids(batch, n_tasks)?;
        if batch.task_ids.iter().any(|&id| id != t) {
            return Err(Error::data(format!(
                "task batches misaligned: batch {t} contains rows of another task"
            )));
        }
        if equal_rows && batch.rows != batches[0].rows {
            return Err(Error::data(format!(
                "task batches misaligned: batch {t} has {} rows, batch 0 has {}",
                batch.rows, batches[0].rows
            )));
        }
    }
    Ok(())
}

fn add_embeddings(
    prefix: &str,
    cfg: &ModelConfig,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> EmbeddingSet {
    let hour = params.add(
        format!("{prefix}hour_embedding"),
        xavier_init(HOUR_CARD, cfg.hour_dim(), rng),
    );
    let week = params.add(
        format!("{prefix}week_embedding"),
        xavier_init(WEEK_CARD, cfg.week_dim(), rng),
    );
    let day = params.add(
        format!("{prefix}day_embedding"),
        xavier_init(DAY_CARD, cfg.day_dim(), rng),
    );
    EmbeddingSet { hour, week, day }
}

fn add_hidden(
    prefix: &str,
    l: usize,
    fan_in: usize,
    width: usize,
    params: &mut ParamStore,
    bn: &mut Vec<BnState>,
    rng: &mut ChaCha8Rng,
) -> HiddenLayer {
    let w = params.add(format!("{prefix}l{l}_w"), xavier_init(fan_in, width, rng));
    let b = params.add(format!("{prefix}l{l}_b"), Tensor::zeros(&[1, width]));
    let gamma = params.add(
        format!("{prefix}l{l}_bn_gamma"),
        Tensor::from_vec(&[1, width], vec![1.0; width]),
    );
    let beta = params.add(format!("{prefix}l{l}_bn_beta"), Tensor::zeros(&[1, width]));
    bn.push(BnState { mean: vec![0.0; width], var: vec![1.0; width] });
    HiddenLayer { w, b, gamma, beta, bn: bn.len() - 1 }
}

fn add_stack(
    prefix: &str,
    in_width: usize,
    widths: &[usize],
    params: &mut ParamStore,
    bn: &mut Vec<BnState>,
    rng: &mut ChaCha8Rng,
) -> Vec<HiddenLayer> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = in_width;
    for (l, &w) in widths.iter().enumerate() {
        layers.push(add_hidden(prefix, l, fan_in, w, params, bn, rng));
        fan_in = w;
    }
    layers
}

fn add_output(
    prefix: &str,
    fan_in: usize,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> OutputLayer {
    let w = params.add(format!("{prefix}out_w"), xavier_init(fan_in, 1, rng));
    let b = params.add(format!("{prefix}out_b"), Tensor::zeros(&[1, 1]));
    OutputLayer { w, b }
}

/// Numeric features concatenated with the (dropout-regularized) embedding
/// lookups for hour, week, day, and optionally task id.
fn embed_input(
    tape: &mut Tape,
    params: &ParamStore,
    emb: EmbeddingSet,
    task_emb: Option<ParamId>,
    batch: &TaskBatch,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let feats = tape.input(batch.rows, cfg.n_features, &batch.features)?;
    let hour_table = tape.param(params, emb.hour)?;
    let week_table = tape.param(params, emb.week)?;
    let day_table = tape.param(params, emb.day)?;
    let mut parts = vec![
        tape.gather(hour_table, &batch.hours)?,
        tape.gather(week_table, &batch.weeks)?,
        tape.gather(day_table, &batch.days)?,
    ];
    if let Some(pid) = task_emb {
        let table = tape.param(params, pid)?;
        parts.push(tape.gather(table, &batch.task_ids)?);
    }
    let mut cats = tape.concat_cols(&parts)?;
    if mode == Mode::Train && cfg.embedding_dropout > 0.0 {
        cats = tape.dropout(cats, cfg.embedding_dropout, rng)?;
    }
    tape.concat_cols(&[feats, cats])
}

/// One hidden layer: linear → leaky-ReLU → batch-norm → dropout. Train mode
/// folds the observed batch statistics into the running estimates.
#[allow(clippy::too_many_arguments)]
fn stack_layer(
    tape: &mut Tape,
    params: &ParamStore,
    bn_running: &mut [BnState],
    layer: HiddenLayer,
    x: NodeId,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let w = tape.param(params, layer.w)?;
    let b = tape.param(params, layer.b)?;
    let z = tape.matmul(x, w)?;
    let z = tape.add_row(z, b)?;
    let a = tape.leaky_relu(z, cfg.leaky_slope)?;
    let gamma = tape.param(params, layer.gamma)?;
    let beta = tape.param(params, layer.beta)?;
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batch_norm_train(a, gamma, beta, BN_EPS)?;
            let state = &mut bn_running[layer.bn];
            for (r, &m) in state.mean.iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in state.var.iter_mut().zip(&stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
            if cfg.hidden_dropout > 0.0 {
                tape.dropout(y, cfg.hidden_dropout, rng)
            } else {
                Ok(y)
            }
        }
        Mode::Eval => {
            let state = &bn_running[layer.bn];
            tape.batch_norm_eval(a, gamma, beta, &state.mean, &state.var, BN_EPS)
        }
    }
}

fn linear_out(tape: &mut Tape, params: &ParamStore, out: OutputLayer, h: NodeId) -> Result<NodeId> {
    let w = tape.param(params, out.w)?;
    let b = tape.param(params, out.b)?;
    let z = tape.matmul(h, w)?;
    tape.add_row(z, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_batch(task: usize, rows: usize, d: usize, seed: u64) -> TaskBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TaskBatch {
            rows,
            features: (0..rows * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
            task_ids: vec![task; rows],
            hours: (0..rows).map(|i| i % 24).collect(),
            weeks: (0..rows).map(|i| i % 53).collect(),
            days: (0..rows).map(|i| i % 31).collect(),
            targets: (0..rows).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    fn eval_once(model: &mut Model, batches: &[TaskBatch]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = model.forward(&mut tape, batches, Mode::Eval, &mut rng).unwrap();
        ids.iter().map(|&id| tape.value(id).to_vec()).collect()
    }

    #[test]
    fn baseline_smoke_widths_and_finite_output() {
        let cfg = ModelConfig::new(ModelKind::Baseline, 1, 12);
        let mut model = Model::build(cfg).unwrap();
        assert_eq!(model.widths, vec![120, 60, 30, 15, 7, 5]);
        assert!(model.parameter_count() > 0);
        let batch = toy_batch(0, 3, 12, 1);
        let preds = eval_once(&mut model, std::slice::from_ref(&batch));
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].len(), 3);
        assert!(preds[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hps_has_one_head_pair_per_task() {
        let model = Model::build(ModelConfig::new(ModelKind::Hps, 3, 4)).unwrap();
        for t in 0..3 {
            let w = model.params.find(&format!("head{t}_l0_w")).unwrap();
            assert_eq!(model.params.get(w).shape, vec![5, 5]);
            let ow = model.params.find(&format!("head{t}_out_w")).unwrap();
            assert_eq!(model.params.get(ow).shape, vec![5, 1]);
        }
        let head_params = model
            .params
            .iter()
            .filter(|(name, _)| name.starts_with("head"))
            .count();
        assert_eq!(head_params, 3 * 6);
        assert!(model.params.find("head3_l0_w").is_none());
    }

    #[test]
    fn sluice_rejects_widths_not_divisible_by_subspaces() {
        // plan for 12 features contains width 15
        let cfg = ModelConfig::new(ModelKind::Sn, 2, 12);
        assert!(Model::build(cfg).is_err());
        let mut ok = ModelConfig::new(ModelKind::Sn, 2, 4);
        ok.subspaces = 5; // plan [40,20,10,5], all divisible by 5
        assert!(Model::build(ok).is_ok());
    }

    #[test]
    fn task_embedding_rows_decide_pooled_predictions() {
        let cfg = ModelConfig::new(ModelKind::Mlpwp, 2, 3);
        let mut model = Model::build(cfg).unwrap();
        let pid = model.params.find("task_embedding").unwrap();
        let table = model.params.get_mut(pid);
        let dim = table.shape[1];
        let row0: Vec<f64> = table.data[..dim].to_vec();
        table.data[dim..2 * dim].copy_from_slice(&row0);

        let mut batch = toy_batch(0, 4, 3, 7);
        let a = eval_once(&mut model, std::slice::from_ref(&batch));
        batch.task_ids = vec![1; 4];
        let b = eval_once(&mut model, std::slice::from_ref(&batch));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_mixing_decouples_tower_tasks() {
        let cfg = ModelConfig::new(ModelKind::Ern, 2, 2);
        let mut model = Model::build(cfg).unwrap();
        for l in 0..model.widths.len() {
            let pid = model.params.find(&format!("alpha{l}")).unwrap();
            let t = model.params.get_mut(pid);
            let dim = t.shape[0];
            for i in 0..dim {
                for j in 0..dim {
                    t.data[i * dim + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        let fixed = toy_batch(0, 3, 2, 11);
        let other_a = toy_batch(1, 3, 2, 12);
        let other_b = toy_batch(1, 3, 2, 13);
        let pa = eval_once(&mut model, &[fixed.clone(), other_a]);
        let pb = eval_once(&mut model, &[fixed, other_b]);
        assert_eq!(pa[0], pb[0]);
        assert_ne!(pa[1], pb[1]);
    }

    #[test]
    fn cross_stitch_gradient_reaches_the_other_tower() {
        let mut cfg = ModelConfig::new(ModelKind::Csn, 2, 2);
        cfg.hidden_dropout = 0.0;
        cfg.embedding_dropout = 0.0;
        let mut model = Model::build(cfg).unwrap();
        let batches = [toy_batch(0, 4, 2, 21), toy_batch(1, 4, 2, 22)];
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let preds = model.forward(&mut tape, &batches, Mode::Train, &mut rng).unwrap();
        // loss on task 0 only
        let loss = tape.mse(preds[0], &batches[0].targets).unwrap();
        tape.backward(loss).unwrap();
        model.params.zero_grads();
        tape.write_grads(&mut model.params).unwrap();
        let pid = model.params.find("t1_l0_w").unwrap();
        let grad = model.params.get(pid).grad.as_ref().unwrap();
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn building_twice_gives_identical_parameters() {
        let cfg = ModelConfig::new(ModelKind::Sn, 2, 4);
        let mut cfg = cfg;
        cfg.subspaces = 5;
        let a = Model::build(cfg.clone()).unwrap();
        let b = Model::build(cfg).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        for (id_a, id_b) in a.params.ids().zip(b.params.ids()) {
            assert_eq!(a.params.get(id_a).data, b.params.get(id_b).data);
        }
    }

    #[test]
    fn mixing_granularity_orders_parameter_counts() {
        let mut csn = ModelConfig::new(ModelKind::Csn, 2, 4);
        let mut sn = ModelConfig::new(ModelKind::Sn, 2, 4);
        let mut ern = ModelConfig::new(ModelKind::Ern, 2, 4);
        for c in [&mut csn, &mut sn, &mut ern] {
            c.subspaces = 5;
        }
        let csn = Model::build(csn).unwrap().parameter_count();
        let sn = Model::build(sn).unwrap().parameter_count();
        let ern = Model::build(ern).unwrap().parameter_count();
        assert!(ern >= sn, "per-neuron {ern} < subspace {sn}");
        assert!(sn >= csn, "subspace {sn} < per-layer {csn}");
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelKind::ALL {
            let name = kind.to_string();
            assert_eq!(name.parse::<ModelKind>().unwrap(), kind);
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn unknown_task_id_is_an_error() {
        let mut model = Model::build(ModelConfig::new(ModelKind::Mlpwp, 2, 3)).unwrap();
        let mut batch = toy_batch(0, 3, 3, 5);
        batch.task_ids[1] = 5;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = model
            .forward(&mut tape, std::slice::from_ref(&batch), Mode::Eval, &mut rng)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn misaligned_tower_batches_are_an_error() {
        let mut model = Model::build(ModelConfig::new(ModelKind::Csn, 2, 2)).unwrap();
        let batches = [toy_batch(0, 3, 2, 1), toy_batch(0, 3, 2, 2)];
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(model.forward(&mut tape, &batches, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn batch_rows_use_zero_based_temporal_indices() {
        use crate::data::{ColumnStats, SplitIndices};
        let ds = TaskDataset {
            task_id: 3,
            task_name: "t".into(),
            timestamps: vec![0, 3600],
            feature_names: vec!["x".into()],
            features: vec![0.5, -0.5],
            temporal: vec![[0, 1, 1], [23, 53, 31]],
            target: vec![1.0, 2.0],
            split: SplitIndices { train: vec![0], val: vec![], test: vec![1] },
            stats: ColumnStats {
                feature_mean: vec![0.0],
                feature_stdev: vec![1.0],
                target_mean: 0.0,
                target_stdev: 1.0,
            },
        };
        let batch = make_batch(&ds, &[0, 1]);
        assert_eq!(batch.hours, vec![0, 23]);
        assert_eq!(batch.weeks, vec![0, 52]);
        assert_eq!(batch.days, vec![0, 30]);
        assert_eq!(batch.task_ids, vec![3, 3]);
        let merged = merge_batches(&[batch.clone(), batch]);
        assert_eq!(merged.rows, 4);
        assert_eq!(merged.targets, vec![1.0, 2.0, 1.0, 2.0]);
    }
}
