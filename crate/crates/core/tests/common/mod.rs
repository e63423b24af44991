//! Helpers shared by the integration suites: finite-difference gradient
//! checking, per-operation and per-architecture check drivers, and an
//! independent exact signed-rank reference.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtl_forge::arch::{Mode, Model, ModelConfig, ModelKind, TaskBatch};
use mtl_forge::autodiff::{NodeId, ParamStore, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// |a−b| / max(|a|, |b|, 1e-3): relative where the gradients are large,
/// absolute near zero so a 1e-9-vs-0 pair doesn't explode the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central-difference check of every parameter entry against the tape's
/// analytic gradient. `build` must rebuild the same scalar loss from the
/// store's current values on every call. Returns the worst relative error.
pub fn op_gradcheck(
    store: &mut ParamStore,
    build: impl Fn(&mut Tape, &ParamStore) -> NodeId,
) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss).unwrap();
    store.zero_grads();
    tape.write_grads(store).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| store.get(id).grad.clone().expect("gradient written"))
        .collect();

    let mut worst = 0.0f64;
    for (which, &id) in ids.iter().enumerate() {
        for j in 0..store.get(id).numel() {
            let orig = store.get(id).data[j];
            store.get_mut(id).data[j] = orig + FD_STEP;
            let up = eval_loss(store, &build);
            store.get_mut(id).data[j] = orig - FD_STEP;
            let down = eval_loss(store, &build);
            store.get_mut(id).data[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[which][j], fd));
        }
    }
    worst
}

fn eval_loss(store: &ParamStore, build: &impl Fn(&mut Tape, &ParamStore) -> NodeId) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.value(loss)[0]
}

/// Central-difference check of a whole architecture: the loss is the summed
/// per-head MSE of a train-mode forward pass, with the dropout RNG cloned
/// from `rng` so every evaluation sees identical masks.
pub fn model_gradcheck(model: &mut Model, batches: &[TaskBatch], rng: &ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let loss = model_loss_on(&mut tape, model, batches, rng);
    tape.backward(loss).unwrap();
    model.params.zero_grads();
    tape.write_grads(&mut model.params).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| model.params.get(id).grad.clone().expect("gradient written"))
        .collect();

    let mut worst = 0.0f64;
    for (which, &id) in ids.iter().enumerate() {
        for j in 0..model.params.get(id).numel() {
            let orig = model.params.get(id).data[j];
            model.params.get_mut(id).data[j] = orig + FD_STEP;
            let up = eval_model_loss(model, batches, rng);
            model.params.get_mut(id).data[j] = orig - FD_STEP;
            let down = eval_model_loss(model, batches, rng);
            model.params.get_mut(id).data[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[which][j], fd));
        }
    }
    worst
}

fn eval_model_loss(model: &mut Model, batches: &[TaskBatch], rng: &ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let loss = model_loss_on(&mut tape, model, batches, rng);
    tape.value(loss)[0]
}

fn model_loss_on(
    tape: &mut Tape,
    model: &mut Model,
    batches: &[TaskBatch],
    rng: &ChaCha8Rng,
) -> NodeId {
    let mut rng = rng.clone();
    let preds = model.forward(tape, batches, Mode::Train, &mut rng).unwrap();
    let losses: Vec<NodeId> = preds
        .iter()
        .zip(batches)
        .map(|(&p, b)| tape.mse(p, &b.targets).unwrap())
        .collect();
    if losses.len() == 1 {
        losses[0]
    } else {
        tape.sum_scalars(&losses).unwrap()
    }
}

pub fn filled(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(&[rows, cols], data)
}

/// Values with magnitude in [0.25, 1.25] and random sign, so finite
/// differences never straddle the leaky-ReLU kink at zero.
pub fn signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.25..1.25);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

pub fn targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Reduces an `[n, m]` node to a scalar: project to one column with fixed
/// non-uniform weights, then mse against the given target.
pub fn reduce(tape: &mut Tape, x: NodeId, target: &[f64]) -> NodeId {
    let (_, m) = tape.dims(x);
    let w: Vec<f64> = (0..m).map(|j| 0.3 + 0.4 * j as f64).collect();
    let wn = tape.input(m, 1, &w).unwrap();
    let col = tape.matmul(x, wn).unwrap();
    tape.mse(col, target).unwrap()
}

/// Finite-difference check of every differentiable tape operation at one
/// seed. Returns (operation name, worst relative error) per operation.
pub fn op_gradcheck_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", filled(&mut rng, 4, 3, -1.0, 1.0));
        let b = store.add("b", filled(&mut rng, 3, 2, -1.0, 1.0));
        let t = targets(&mut rng, 4);
        out.push((
            "matmul",
            op_gradcheck(&mut store, |tape, s| {
                let an = tape.param(s, a).unwrap();
                let bn = tape.param(s, b).unwrap();
                let y = tape.matmul(an, bn).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", filled(&mut rng, 4, 3, -1.0, 1.0));
        let b = store.add("b", filled(&mut rng, 1, 3, -0.5, 0.5));
        let t = targets(&mut rng, 4);
        out.push((
            "add_row",
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let bn = tape.param(s, b).unwrap();
                let y = tape.add_row(xn, bn).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    for (name, slope) in [
        ("leaky_relu_zero_slope", 0.0),
        ("leaky_relu_default", 0.01),
        ("leaky_relu_steep", 0.3),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", signed(&mut rng, 4, 3));
        let t = targets(&mut rng, 4);
        out.push((
            name,
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let y = tape.leaky_relu(xn, slope).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", filled(&mut rng, 5, 3, -2.0, 2.0));
        let g = store.add("gamma", filled(&mut rng, 1, 3, 0.8, 1.2));
        let b = store.add("beta", filled(&mut rng, 1, 3, -0.3, 0.3));
        let t = targets(&mut rng, 5);
        out.push((
            "batch_norm_train",
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let gn = tape.param(s, g).unwrap();
                let bn = tape.param(s, b).unwrap();
                let (y, _stats) = tape.batch_norm_train(xn, gn, bn, 1e-5).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", filled(&mut rng, 4, 3, -2.0, 2.0));
        let g = store.add("gamma", filled(&mut rng, 1, 3, 0.8, 1.2));
        let b = store.add("beta", filled(&mut rng, 1, 3, -0.3, 0.3));
        let mean: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
        let t = targets(&mut rng, 4);
        out.push((
            "batch_norm_eval",
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let gn = tape.param(s, g).unwrap();
                let bn = tape.param(s, b).unwrap();
                let y = tape.batch_norm_eval(xn, gn, bn, &mean, &var, 1e-5).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", filled(&mut rng, 4, 6, -1.0, 1.0));
        let t = targets(&mut rng, 4);
        // the mask RNG is cloned per evaluation so analytic and
        // finite-difference passes see the same dropped units
        let mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0D0);
        out.push((
            "dropout",
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let mut r = mask_rng.clone();
                let y = tape.dropout(xn, 0.5, &mut r).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let table = store.add("table", filled(&mut rng, 5, 3, -1.0, 1.0));
        // repeated row 2 exercises gradient accumulation into one table row
        let ids = [0usize, 2, 2, 4, 1];
        let t = targets(&mut rng, ids.len());
        out.push((
            "gather",
            op_gradcheck(&mut store, |tape, s| {
                let tn = tape.param(s, table).unwrap();
                let y = tape.gather(tn, &ids).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", filled(&mut rng, 4, 2, -1.0, 1.0));
        let b = store.add("b", filled(&mut rng, 4, 3, -1.0, 1.0));
        let c = store.add("c", filled(&mut rng, 4, 1, -1.0, 1.0));
        let t = targets(&mut rng, 4);
        out.push((
            "concat_cols",
            op_gradcheck(&mut store, |tape, s| {
                let parts = [
                    tape.param(s, a).unwrap(),
                    tape.param(s, b).unwrap(),
                    tape.param(s, c).unwrap(),
                ];
                let y = tape.concat_cols(&parts).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", filled(&mut rng, 4, 6, -1.0, 1.0));
        let t = targets(&mut rng, 4);
        out.push((
            "slice_cols",
            op_gradcheck(&mut store, |tape, s| {
                let xn = tape.param(s, x).unwrap();
                let y = tape.slice_cols(xn, 1, 3).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    // chunk 3: two 3-wide chunks mixed by a 2x2 matrix; chunk 1: per-column
    for (name, chunk, cols, dim) in [
        ("block_mix_chunked", 3usize, 6usize, 2usize),
        ("block_mix_per_column", 1, 4, 4),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = store.add("h", filled(&mut rng, 4, cols, -1.0, 1.0));
        let alpha = store.add("alpha", filled(&mut rng, dim, dim, -0.8, 0.8));
        let t = targets(&mut rng, 4);
        out.push((
            name,
            op_gradcheck(&mut store, |tape, s| {
                let hn = tape.param(s, h).unwrap();
                let an = tape.param(s, alpha).unwrap();
                let y = tape.block_mix(hn, an, chunk).unwrap();
                reduce(tape, y, &t)
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = store.add("pred", filled(&mut rng, 5, 1, -1.0, 1.0));
        let t = targets(&mut rng, 5);
        out.push((
            "mse",
            op_gradcheck(&mut store, |tape, s| {
                let pn = tape.param(s, p).unwrap();
                tape.mse(pn, &t).unwrap()
            }),
        ));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", filled(&mut rng, 3, 1, -1.0, 1.0));
        let b = store.add("b", filled(&mut rng, 4, 1, -1.0, 1.0));
        let ta = targets(&mut rng, 3);
        let tb = targets(&mut rng, 4);
        out.push((
            "sum_scalars",
            op_gradcheck(&mut store, |tape, s| {
                let an = tape.param(s, a).unwrap();
                let bn = tape.param(s, b).unwrap();
                let la = tape.mse(an, &ta).unwrap();
                let lb = tape.mse(bn, &tb).unwrap();
                tape.sum_scalars(&[la, lb]).unwrap()
            }),
        ));
    }

    out
}

/// Hand-built batch with in-range temporal categories (weeks and days are
/// zero-based indices here).
pub fn tiny_batch(rng: &mut ChaCha8Rng, rows: usize, n_features: usize, task: usize) -> TaskBatch {
    TaskBatch {
        rows,
        features: (0..rows * n_features).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        task_ids: vec![task; rows],
        hours: (0..rows).map(|_| rng.gen_range(0..24)).collect(),
        weeks: (0..rows).map(|_| rng.gen_range(0..53)).collect(),
        days: (0..rows).map(|_| rng.gen_range(0..31)).collect(),
        targets: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Desk-size configuration: 2 tasks (1 for the per-task model), 2 numeric
/// features, 2-wide embeddings.
pub fn small_config(kind: ModelKind, seed: u64) -> ModelConfig {
    let n_tasks = if kind == ModelKind::Baseline { 1 } else { 2 };
    let mut cfg = ModelConfig::new(kind, n_tasks, 2);
    cfg.task_embedding_dim = 2;
    cfg.hour_embedding_dim = 2;
    cfg.week_embedding_dim = 2;
    cfg.day_embedding_dim = 2;
    cfg.subspaces = 2;
    cfg.seed = seed;
    cfg
}

/// Nudges every parameter off its initialization so no pre-activation sits
/// exactly on the leaky-ReLU kink (zero biases otherwise guarantee some do
/// whenever dropout zeroes a unit's entire input row).
pub fn jitter_params(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data.iter_mut() {
            let m = rng.gen_range(0.02..0.12);
            *v += if rng.gen_bool(0.5) { m } else { -m };
        }
    }
}

/// Finite-difference check of one architecture at widths [6, 4], returning
/// the worst relative error over all parameters.
pub fn arch_gradcheck(kind: ModelKind, seed: u64) -> f64 {
    let mut cfg = small_config(kind, seed);
    // milder masks than the training default: with tiny batches, heavy
    // dropout can leave a unit fed by zeros alone, parking its
    // zero-initialized bias exactly on the activation kink where finite
    // differences are undefined
    cfg.hidden_dropout = 0.25;
    let n_tasks = cfg.n_tasks;
    let mut model = Model::build_with_widths(cfg, vec![6, 4]).unwrap();
    jitter_params(&mut model, seed ^ 0x7177);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(977));
    let batches: Vec<TaskBatch> = if kind.is_multitask() {
        (0..n_tasks).map(|t| tiny_batch(&mut rng, 8, 2, t)).collect()
    } else if kind.is_pooled() {
        // one mixed batch with rows from both tasks
        let mut b = tiny_batch(&mut rng, 8, 2, 0);
        for (i, id) in b.task_ids.iter_mut().enumerate() {
            *id = i % 2;
        }
        vec![b]
    } else {
        vec![tiny_batch(&mut rng, 8, 2, 0)]
    };
    let dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFACE);
    model_gradcheck(&mut model, &batches, &dropout_rng)
}

/// Exact two-sided signed-rank reference, derived from scratch: drop zero
/// differences, mid-rank tied magnitudes, statistic min(W+, W−), p by
/// enumerating all 2^k sign assignments. Returns (statistic, p).
pub fn brute_force_wilcoxon(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let k = diffs.len();
    assert!(k >= 1 && k <= 20, "brute force only for small samples");

    // mid-ranks of |d|, computed over the sorted magnitudes
    let mut mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    mags.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank_of = |m: f64| -> f64 {
        let lower = mags.iter().filter(|&&x| x < m).count();
        let equal = mags.iter().filter(|&&x| x == m).count();
        // average of positions lower+1 ..= lower+equal
        (2 * lower + equal + 1) as f64 / 2.0
    };
    let ranks: Vec<f64> = diffs.iter().map(|d| rank_of(d.abs())).collect();

    let w_plus: f64 =
        diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    let total: f64 = ranks.iter().sum();
    let statistic = w_plus.min(total - w_plus);

    let mut at_or_below = 0u64;
    for mask in 0u64..(1u64 << k) {
        let s: f64 = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= statistic + 1e-12 {
            at_or_below += 1;
        }
    }
    let p = (2.0 * at_or_below as f64 / (1u64 << k) as f64).min(1.0);
    (statistic, p)
}
