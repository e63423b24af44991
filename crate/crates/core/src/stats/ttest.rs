//! Paired two-sided t-test on the per-pair differences.

use crate::stats::dist::t_two_sided_p;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TTestOutcome {
    pub t: f64,
    pub p_value: f64,
    pub df: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestOutcome> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::data(format!("paired t-test needs at least 2 pairs, got {k}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if !diffs.iter().all(|d| d.is_finite()) {
        return Err(Error::numeric("non-finite difference in paired t-test".to_string()));
    }
    let kf = k as f64;
    let mean = diffs.iter().sum::<f64>() / kf;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (kf - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(Error::numeric(
            "paired t-test differences have zero variance".to_string(),
        ));
    }
    let t = mean / (sd / kf.sqrt());
    let df = kf - 1.0;
    Ok(TTestOutcome { t, p_value: t_two_sided_p(t, df), df })
}
