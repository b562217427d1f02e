//! Rank-based hypothesis tests, multiple-comparison correction and the
//! correctness-effect model over MPS area ratios.

mod chi2;
mod effect;
mod rank;
mod tests;

use serde::{Deserialize, Serialize};

pub use chi2::{chi2_sf, ln_gamma, regularized_gamma_q};
pub use effect::{fit_size_model, fit_size_observations, EffectEstimate, SizeObservation, Z_99};
pub use rank::rank_midtie;
pub use tests::{bonferroni, friedman, kruskal_wallis};

/// Default significance threshold.
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub tie_corrected: bool,
}

/// A test result as serialized into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub tie_corrected: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corrected_p: Option<f64>,
    pub threshold: f64,
    pub significant: bool,
}

impl TestReport {
    pub fn new(test: impl Into<String>, result: TestResult, corrected_p: Option<f64>, threshold: f64) -> Self {
        let p = corrected_p.unwrap_or(result.p_value);
        Self {
            test: test.into(),
            statistic: result.statistic,
            df: result.df,
            p_value: result.p_value,
            tie_corrected: result.tie_corrected,
            corrected_p,
            threshold,
            significant: p < threshold,
        }
    }
}
