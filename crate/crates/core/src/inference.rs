//! Coefficient, global and homogeneity tests, plus residual diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BettaError, Result};
use crate::linalg::SpdFactor;
use crate::model::BettaFit;
use crate::special::{chisq_upper_tail, normal_quantile, normal_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Wald,
    GlobalChisq,
    HomogeneityQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    /// Coefficient name for Wald tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<String>,
    pub statistic: f64,
    /// Degrees of freedom of the chi-square reference; `None` for normal-reference tests.
    pub dof: Option<usize>,
    pub p_value: f64,
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Wald z-tests for arbitrary coefficients and covariance.
pub fn wald_tests_from(beta: &[f64], cov: &DMatrix<f64>, names: &[String]) -> Result<Vec<TestResult>> {
    beta.iter()
        .enumerate()
        .map(|(j, &b)| {
            let var = cov[(j, j)];
            if !(var > 0.0 && var.is_finite()) {
                return Err(BettaError::Numerical(format!(
                    "non-positive variance {var} for coefficient `{}`",
                    names.get(j).map(String::as_str).unwrap_or("?")
                )));
            }
            let z = b / var.sqrt();
            Ok(TestResult {
                kind: TestKind::Wald,
                term: names.get(j).cloned(),
                statistic: z,
                dof: None,
                p_value: two_sided_normal_p(z),
            })
        })
        .collect()
}

/// `z_j = β̂_j / √Var(β̂)_jj` with two-sided normal p-values, intercept first.
pub fn wald_tests(fit: &BettaFit) -> Result<Vec<TestResult>> {
    wald_tests_from(&fit.beta_hat, &fit.beta_cov, &fit.term_names)
}

/// Joint chi-square test that every non-intercept coefficient is zero.
///
/// The statistic is `b₁ᵀ [Cov(β̂)₁₁]⁻¹ b₁` on the non-intercept block, which
/// equals `b₁ᵀ X_cᵀ Ŵ⁻¹ X_c b₁` with `X_c` the weight-centred covariates.
pub fn global_test_from(beta: &[f64], cov: &DMatrix<f64>) -> Result<TestResult> {
    let p = beta.len().saturating_sub(1);
    if p == 0 {
        return Err(BettaError::NotApplicable("global test needs at least one covariate".into()));
    }
    let block = cov.view((1, 1), (p, p)).into_owned();
    let b = DVector::from_column_slice(&beta[1..]);
    let factor = SpdFactor::new(&block)
        .map_err(|_| BettaError::Numerical("covariate covariance block is not positive definite".into()))?;
    let statistic = b.dot(&factor.solve(&b)).max(0.0);
    Ok(TestResult {
        kind: TestKind::GlobalChisq,
        term: None,
        statistic,
        dof: Some(p),
        p_value: chisq_upper_tail(statistic, p),
    })
}

pub fn global_test(fit: &BettaFit) -> Result<TestResult> {
    global_test_from(&fit.beta_hat, &fit.beta_cov)
}

/// Q = Σ (Ĉ_i − fitted_i)² / σ̂²_i against χ²_{m−p−1}.
///
/// The fitted values are those of the model under the null hypothesis
/// (`σ²_u = 0`, weights `1/σ̂²_i`), which makes the χ² reference exact for
/// normal estimates. At a boundary REML fit they coincide with `fit.fitted`.
pub fn homogeneity_test(fit: &BettaFit) -> Result<TestResult> {
    let (m, p) = (fit.m(), fit.p());
    if m <= p + 1 {
        return Err(BettaError::DegreesOfFreedom { m, p });
    }
    let dof = m - p - 1;
    let statistic = q_statistic(&fit.estimates, &fit.null_fitted, &fit.std_errors);
    Ok(TestResult {
        kind: TestKind::HomogeneityQ,
        term: None,
        statistic,
        dof: Some(dof),
        p_value: chisq_upper_tail(statistic, dof),
    })
}

pub fn q_statistic(estimates: &[f64], fitted: &[f64], std_errors: &[f64]) -> f64 {
    let mut terms: Vec<f64> = estimates
        .iter()
        .zip(fitted)
        .zip(std_errors)
        .map(|((c, f), s)| ((c - f) / s).powi(2))
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// One row of the error-bar / QQ diagnostic file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub id: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub fitted: f64,
    pub std_residual: f64,
    /// Normal quantile matched to this residual's rank.
    pub normal_quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticRow>,
    pub sorted_residuals: Vec<f64>,
    /// `Φ⁻¹((i − 0.5)/m)`, i = 1..m.
    pub normal_quantiles: Vec<f64>,
}

pub fn residual_diagnostics(fit: &BettaFit) -> Diagnostics {
    diagnostics_from(&fit.ids, &fit.estimates, &fit.std_errors, &fit.fitted)
}

/// Diagnostics for any fitted values, with residuals standardized by `σ̂_i`.
pub fn diagnostics_from(ids: &[String], estimates: &[f64], std_errors: &[f64], fitted: &[f64]) -> Diagnostics {
    let m = estimates.len();
    let std_residuals: Vec<f64> = (0..m).map(|i| (estimates[i] - fitted[i]) / std_errors[i]).collect();
    let quantiles: Vec<f64> = (1..=m).map(|i| normal_quantile((i as f64 - 0.5) / m as f64)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| std_residuals[a].total_cmp(&std_residuals[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; m];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let rows = (0..m)
        .map(|i| DiagnosticRow {
            id: ids[i].clone(),
            estimate: estimates[i],
            lower: estimates[i] - 2.0 * std_errors[i],
            upper: estimates[i] + 2.0 * std_errors[i],
            fitted: fitted[i],
            std_residual: std_residuals[i],
            normal_quantile: quantiles[rank[i]],
        })
        .collect();
    Diagnostics {
        rows,
        sorted_residuals: order.iter().map(|&i| std_residuals[i]).collect(),
        normal_quantiles: quantiles,
    }
}
