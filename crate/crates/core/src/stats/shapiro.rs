//! Shapiro-Wilk W test for normality, 3 ≤ n ≤ 5000, following the published
//! AS R94 approximation: coefficients from expected normal order statistics,
//! p-value from a log-normal transform of 1 − W.

use crate::stats::dist::{normal_quantile, normal_sf};
use crate::{Error, Result};

/// Returns (W, p). W near 1 is consistent with normality; small p rejects it.
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64)> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::numeric(format!(
            "shapiro-wilk supports 3..=5000 samples, got {n}"
        )));
    }
    if !sample.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("non-finite value in shapiro-wilk sample".to_string()));
    }

    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(Error::numeric("shapiro-wilk sample has zero variance".to_string()));
    }

    let a = upper_coefficients(n);

    // Antisymmetric coefficient for the i-th order statistic (0-based):
    // +a[k] in the upper half, −a[k] mirrored in the lower half.
    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        if i > j {
            a[j]
        } else if i < j {
            -a[i]
        } else {
            0.0
        }
    };

    // W is the squared correlation between the scaled order statistics and
    // the coefficients. Scaling by the range keeps the sums well-conditioned.
    let mean_x: f64 = x.iter().map(|v| v / range).sum::<f64>() / n as f64;
    let mean_c: f64 = (0..n).map(coef).sum::<f64>() / n as f64;
    let mut ssx = 0.0;
    let mut ssc = 0.0;
    let mut sxc = 0.0;
    for i in 0..n {
        let dx = x[i] / range - mean_x;
        let dc = coef(i) - mean_c;
        ssx += dx * dx;
        ssc += dc * dc;
        sxc += dx * dc;
    }
    let norm = (ssc * ssx).sqrt();
    // 1 − W computed directly so W near 1 keeps precision.
    let w1 = ((norm - sxc) * (norm + sxc)) / (ssc * ssx);
    let w = (1.0 - w1).clamp(0.0, 1.0);

    Ok((w, p_value(w, n)))
}

/// Positive coefficients for the upper half of the order statistics,
/// `a[0]` belonging to the largest observation.
fn upper_coefficients(n: usize) -> Vec<f64> {
    let nn2 = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }

    // Expected normal order statistics for the lower half (negative), by the
    // Blom approximation Φ⁻¹((i − 0.375)/(n + 0.25)).
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=nn2)
        .map(|i| normal_quantile((i as f64 - 0.375) / an25))
        .collect();
    let summ2: f64 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];

    let mut a = vec![0.0; nn2];
    let a0 = poly(&C1, rsn) - m[0] / ssumm2;
    let (start, fac) = if n > 5 {
        let a1 = poly(&C2, rsn) - m[1] / ssumm2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a0 * a0 - 2.0 * a1 * a1))
            .sqrt();
        a[1] = a1;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a0 * a0)).sqrt();
        (1, fac)
    };
    a[0] = a0;
    for k in start..nn2 {
        a[k] = -m[k] / fac;
    }
    a
}

fn p_value(w: f64, n: usize) -> f64 {
    if w >= 1.0 {
        return 1.0;
    }
    if n == 3 {
        // Exact for n = 3: p = 6/π·(asin(√W) − asin(√(3/4)))
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - (0.75f64).sqrt().asin());
        return p.clamp(0.0, 1.0);
    }

    const MU_SMALL: [f64; 4] = [0.5440, -0.39978, 0.025054, -0.0006714];
    const SIG_SMALL: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const MU_LARGE: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const SIG_LARGE: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    let y = (1.0 - w).ln();
    let an = n as f64;
    let z = if n <= 11 {
        let gamma = -2.273 + 0.459 * an;
        if y >= gamma {
            return 0.0;
        }
        let yt = -(gamma - y).ln();
        (yt - poly(&MU_SMALL, an)) / poly(&SIG_SMALL, an).exp()
    } else {
        let u = an.ln();
        (y - poly(&MU_LARGE, u)) / poly(&SIG_LARGE, u).exp()
    };
    normal_sf(z).clamp(0.0, 1.0)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}
