//! Evaluation statistics: error metrics, normality and location tests, and
//! the comparison protocol that picks a test by sample size.

pub mod dist;
mod metrics;
mod shapiro;
mod ttest;
mod wilcoxon;

pub use metrics::{pearson, rmse, skill_score, ModelScores};
pub use shapiro::shapiro_wilk;
pub use ttest::{paired_t_test, TTestOutcome};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonOutcome};

use crate::Result;

/// Significance level shared by the normality gate and the location tests.
pub const ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Wilcoxon,
    PairedT,
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestKind::Wilcoxon => "wilcoxon",
            TestKind::PairedT => "t_test",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SignificanceResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Normality p-value of the paired differences, when that gate ran.
    pub normality_p: Option<f64>,
    /// True when normality was rejected and the signed-rank test replaced
    /// the t-test.
    pub fallback: bool,
}

/// Tests whether `reference` and `baseline` per-task scores differ, two-sided
/// at [`ALPHA`]. More than 20 tasks: signed-rank test. Otherwise: paired
/// t-test guarded by a normality check on the differences, falling back to
/// the exact signed-rank test when normality is rejected.
pub fn compare_models(reference: &[f64], baseline: &[f64]) -> Result<SignificanceResult> {
    let k = reference.len();
    if k > 20 {
        let w = wilcoxon_signed_rank(reference, baseline)?;
        return Ok(SignificanceResult {
            test: TestKind::Wilcoxon,
            statistic: w.statistic,
            p_value: w.p_value,
            significant: w.p_value < ALPHA,
            normality_p: None,
            fallback: false,
        });
    }

    let normality_p = if k >= 3 {
        let diffs: Vec<f64> = reference.iter().zip(baseline).map(|(r, b)| r - b).collect();
        Some(shapiro_wilk(&diffs)?.1)
    } else {
        None
    };

    if let Some(np) = normality_p {
        if np < ALPHA {
            let w = wilcoxon_signed_rank(reference, baseline)?;
            return Ok(SignificanceResult {
                test: TestKind::Wilcoxon,
                statistic: w.statistic,
                p_value: w.p_value,
                significant: w.p_value < ALPHA,
                normality_p,
                fallback: true,
            });
        }
    }

    let t = paired_t_test(reference, baseline)?;
    Ok(SignificanceResult {
        test: TestKind::PairedT,
        statistic: t.t,
        p_value: t.p_value,
        significant: t.p_value < ALPHA,
        normality_p,
        fallback: false,
    })
}
