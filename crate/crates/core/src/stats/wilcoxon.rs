//! Wilcoxon signed-rank test on paired samples. Zero differences are
//! dropped, tied magnitudes receive mid-ranks, and the statistic is
//! min(W+, W−). Small samples (≤ 20 nonzero differences) use the exact
//! null distribution; larger samples a normal approximation with tie and
//! continuity corrections.

use crate::stats::dist::normal_sf;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct WilcoxonOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// True when the exact null distribution was enumerated.
    pub exact: bool,
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonOutcome> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if !diffs.iter().all(|d| d.is_finite()) {
        return Err(Error::numeric("non-finite difference in signed-rank test".to_string()));
    }
    let k = diffs.len();
    if k < 6 {
        return Err(Error::data(format!(
            "signed-rank test needs at least 6 nonzero differences, got {k}"
        )));
    }

    let ranks = midranks(&mut diffs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total = k as f64 * (k as f64 + 1.0) / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_value, exact) = if k <= 20 {
        (exact_p(&ranks, statistic), true)
    } else {
        (approx_p(&ranks, statistic, k), false)
    };
    Ok(WilcoxonOutcome { statistic, p_value, exact })
}

/// Mid-ranks of |d| in the order the differences appear. Sorts a copy of
/// the magnitudes; `diffs` itself is only re-read, never reordered.
fn midranks(diffs: &mut [f64]) -> Vec<f64> {
    let k = diffs.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p: enumerate the null distribution of the rank sum over
/// all sign assignments via a subset-sum table on doubled ranks (mid-ranks
/// are multiples of ½, so doubling makes them integers).
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut table = vec![0.0f64; total + 1];
    table[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            table[s] += table[s - r];
        }
    }
    let obs = (2.0 * statistic).round() as usize;
    let below: f64 = table[..=obs.min(total)].iter().sum();
    let n_assignments = (1u64 << ranks.len()) as f64;
    (2.0 * below / n_assignments).min(1.0)
}

/// Normal approximation with tie correction on the variance and a
/// ½-unit continuity correction toward the mean.
fn approx_p(ranks: &[f64], statistic: f64, k: usize) -> f64 {
    let kf = k as f64;
    let mean = kf * (kf + 1.0) / 4.0;
    let mut var = kf * (kf + 1.0) * (2.0 * kf + 1.0) / 24.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    let correction = 0.5 * (statistic - mean).signum();
    let z = (statistic - mean - correction) / var.sqrt();
    (2.0 * normal_sf(z.abs())).clamp(0.0, 1.0)
}
