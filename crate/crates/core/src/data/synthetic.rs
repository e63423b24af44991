//! Synthetic multi-task families with controllable relatedness: every task
//! mixes one shared latent signal with its own private one,
//! `y_t = ρ·f(x) + (1−ρ)·g_t(x) + noise`, over a feature matrix shared by
//! all tasks. ρ=1 makes the tasks identical, ρ=0 unrelated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{split_and_standardize, RawSeries, TaskDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Linear,
    /// Feature 0 plays the role of a wind speed: it passes through a
    /// logistic power curve before entering the latents, and the private
    /// latents become sinusoids of their projections.
    PowerCurve,
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Nonlinearity::Linear),
            "power_curve" => Ok(Nonlinearity::PowerCurve),
            other => Err(Error::usage(format!(
                "unknown nonlinearity `{other}` (expected linear or power_curve)"
            ))),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Nonlinearity::Linear => "linear",
            Nonlinearity::PowerCurve => "power_curve",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub n_features: usize,
    /// ρ ∈ [0,1]: weight of the shared latent in every task's target.
    pub relatedness: f64,
    pub nonlinearity: Nonlinearity,
    pub noise_stdev: f64,
    pub n_samples: usize,
    /// Chronological tail held out as the test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.n_features == 0 || self.n_samples < 8 {
            return Err(Error::usage(format!(
                "synthetic spec needs tasks ≥ 1, features ≥ 1, samples ≥ 8; \
                 got {}, {}, {}",
                self.n_tasks, self.n_features, self.n_samples
            )));
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return Err(Error::usage(format!(
                "relatedness must be in [0,1], got {}",
                self.relatedness
            )));
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(Error::usage(format!(
                "test fraction must be in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.noise_stdev < 0.0 {
            return Err(Error::usage(format!(
                "noise stdev must be nonnegative, got {}",
                self.noise_stdev
            )));
        }
        Ok(())
    }
}

/// Raw hourly series (starting 2015-01-01T00:00Z), one per task, all sharing
/// the same timestamps and feature matrix.
pub fn generate_series(spec: &SyntheticSpec) -> Result<Vec<RawSeries>> {
    spec.validate()?;
    let n = spec.n_samples;
    let d = spec.n_features;
    let t_count = spec.n_tasks;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let features: Vec<f64> = (0..n * d).map(|_| std_normal(&mut rng)).collect();

    // One weight vector for the shared latent plus one per task, made as
    // mutually orthogonal as the feature dimension allows so that ρ alone
    // controls how related the tasks are.
    let weights = latent_weights(t_count + 1, d, &mut rng);
    let phases: Vec<f64> = (0..t_count)
        .map(|_| rng.gen::<f64>() * 2.0 * std::f64::consts::PI)
        .collect();

    let project = |w: &[f64], phase: Option<f64>| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for row in 0..n {
            let mut acc = 0.0;
            for col in 0..d {
                let mut x = features[row * d + col];
                if col == 0 && spec.nonlinearity == Nonlinearity::PowerCurve {
                    // logistic power curve on the "wind speed" feature
                    x = 1.0 / (1.0 + (-2.0 * x).exp());
                }
                acc += w[col] * x;
            }
            out.push(match phase {
                Some(p) => (acc * 2.0 + p).sin(),
                None => acc,
            });
        }
        standardize_in_place(&mut out);
        out
    };

    let shared = project(&weights[0], None);
    let rho = spec.relatedness;
    const START: i64 = 1420070400; // 2015-01-01T00:00:00Z
    let timestamps: Vec<i64> = (0..n).map(|i| START + 3600 * i as i64).collect();
    let feature_names: Vec<String> = (0..d).map(|c| format!("x{c}")).collect();

    let mut out = Vec::with_capacity(t_count);
    for task in 0..t_count {
        let private = match spec.nonlinearity {
            Nonlinearity::Linear => project(&weights[task + 1], None),
            Nonlinearity::PowerCurve => project(&weights[task + 1], Some(phases[task])),
        };
        let target: Vec<f64> = (0..n)
            .map(|i| {
                rho * shared[i] + (1.0 - rho) * private[i] + spec.noise_stdev * std_normal(&mut rng)
            })
            .collect();
        out.push(RawSeries {
            task_name: format!("task{task:02}"),
            timestamps: timestamps.clone(),
            feature_names: feature_names.clone(),
            features: features.clone(),
            target,
        });
    }
    Ok(out)
}

/// Full synthetic pipeline: generate, then split/standardize every task
/// with a shared boundary and shared shuffle seed so splits align
/// row-for-row across tasks.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    train_frac: f64,
    split_seed: u64,
) -> Result<Vec<TaskDataset>> {
    let series = generate_series(spec)?;
    let n = spec.n_samples;
    let boundary_row = ((1.0 - spec.test_fraction) * n as f64).floor() as usize;
    let boundary_ts = series[0].timestamps[boundary_row.clamp(1, n - 1)];
    series
        .iter()
        .enumerate()
        .map(|(id, s)| split_and_standardize(s, id, boundary_ts, train_frac, split_seed))
        .collect()
}

/// `count` unit vectors in R^d: Gram-Schmidt-orthogonalized against all
/// previously accepted directions while the dimension allows, plain
/// normalized random directions after the basis is full.
fn latent_weights(count: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let raw: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        let mut v = raw.clone();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 && basis.len() < d {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v.clone());
            out.push(v);
        } else {
            let mut v = raw;
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for vi in &mut v {
                *vi /= norm;
            }
            out.push(v);
        }
    }
    out
}

fn standardize_in_place(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let stdev = var.sqrt().max(1e-12);
    for x in v {
        *x = (*x - mean) / stdev;
    }
}

/// Standard normal draw via the Box-Muller transform.
fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
