//! Parametric bootstrap check of a reported standard error.

use serde::{Deserialize, Serialize};

use super::population::population_from_table;
use super::resample::resample_table;
use super::rng::{substream, TAG_BOOTSTRAP};
use crate::error::{BettaError, Result};
use crate::estimator::Estimator;
use crate::io::FrequencyCountTable;

pub const MIN_RESAMPLES: usize = 50;

/// Abort when more than this fraction of resamples fail to estimate.
const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub failures: usize,
    pub original_estimate: f64,
    pub original_std_error: f64,
    /// Standard deviation (n − 1 denominator) of the resampled estimates.
    pub bootstrap_sd: f64,
    /// `bootstrap_sd / original_std_error`, absent when the reported error is zero.
    pub ratio: Option<f64>,
    /// True when the resampling spread exceeds the reported standard error.
    pub understated: bool,
}

/// Redraw tables of the original size from the empirical abundance
/// distribution, re-estimate each, and compare the spread with the reported
/// standard error.
pub fn parametric_bootstrap_se(
    table: &FrequencyCountTable,
    estimator: &Estimator,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if resamples < MIN_RESAMPLES {
        return Err(BettaError::Config(format!("need at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    let original = estimator.estimate(table)?;
    let pop = population_from_table(table, "bootstrap");
    let n = table.total_reads();
    let mut values = Vec::with_capacity(resamples);
    let mut failures = 0;
    for b in 0..resamples {
        let mut rng = substream(seed, &[TAG_BOOTSTRAP, b as u64]);
        let resampled = resample_table(&pop, n, &mut rng);
        match estimator.estimate(&resampled) {
            Ok(e) if e.estimate.is_finite() => values.push(e.estimate),
            Ok(_) | Err(BettaError::EstimatorFailed(_) | BettaError::EstimatorProtocol(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures as f64 > MAX_FAILURE_FRACTION * resamples as f64 || values.len() < 2 {
        return Err(BettaError::BootstrapUnstable { failed: failures, total: resamples });
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let se = original.std_error;
    Ok(BootstrapSummary {
        resamples,
        failures,
        original_estimate: original.estimate,
        original_std_error: se,
        bootstrap_sd: sd,
        ratio: (se > 0.0).then(|| sd / se),
        understated: sd > se,
    })
}
