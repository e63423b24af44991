//! Error metrics and cross-model score comparisons.

use crate::{Error, Result};

/// Per-task RMSEs for one model, in canonical task order.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub model: String,
    pub rmse: Vec<f64>,
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::data(format!(
            "rmse inputs differ in length: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::data("rmse of an empty sample".to_string()));
    }
    let ss: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    let v = (ss / pred.len() as f64).sqrt();
    if !v.is_finite() {
        return Err(Error::numeric("rmse is not finite".to_string()));
    }
    Ok(v)
}

/// Mean relative improvement of `reference` over `baseline` across tasks:
/// (1/K)·Σ(1 − ref_k/base_k). Positive means the reference model beats the
/// per-task baselines on average.
pub fn skill_score(reference: &[f64], baseline: &[f64]) -> Result<f64> {
    if reference.len() != baseline.len() {
        return Err(Error::data(format!(
            "skill score inputs differ in length: {} vs {}",
            reference.len(),
            baseline.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::data("skill score of an empty sample".to_string()));
    }
    let mut acc = 0.0;
    for (r, b) in reference.iter().zip(baseline) {
        if *b == 0.0 {
            return Err(Error::numeric("skill score with zero baseline rmse".to_string()));
        }
        acc += 1.0 - r / b;
    }
    Ok(acc / reference.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::data(format!(
            "correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numeric(
            "correlation undefined for a constant series".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let v = rmse(&[2.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((v - 10.0f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn skill_score_averages_relative_improvement() {
        // halving every task's error → skill 0.5
        let s = skill_score(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        // one task worse by half → negative skill
        let s = skill_score(&[3.0], &[2.0]).unwrap();
        assert!((s + 0.5).abs() < 1e-15);
        // mixed: (1 − 0.5) + (1 − 2) averaged
        let s = skill_score(&[1.0, 4.0], &[2.0, 2.0]).unwrap();
        assert!((s - (0.5 - 1.0) / 2.0).abs() < 1e-15);
        assert!(skill_score(&[1.0], &[0.0]).is_err());
        assert!(skill_score(&[], &[]).is_err());
    }

    #[test]
    fn pearson_hits_the_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -0.5 * v + 3.0).collect();
        assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-14);
        assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-14);
        assert!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(pearson(&x[..1], &x[..1]).is_err());
    }

    #[test]
    fn pearson_matches_hand_computation() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 1.0, 4.0];
        // means 2 and 7/3; sxy = 2, sxx = 2, syy = 14/3
        let expect = 2.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        assert!((pearson(&x, &y).unwrap() - expect).abs() < 1e-14);
    }
}
