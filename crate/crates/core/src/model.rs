//! The hierarchical richness model and its boundary-constrained REML fit.
//!
//! Each population contributes an estimate `Ĉ_i` with standard error `σ̂_i`;
//! marginally `Ĉ_i ~ N(β₀ + x_iᵀβ, σ²_u + σ̂²_i)`. For a fixed `σ²_u` the
//! coefficients have a closed-form GLS solution, so the restricted likelihood
//! is maximized by a bounded scalar search over `σ²_u ∈ [0, U]`.

use std::cmp::Ordering;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BettaError, Result};
use crate::linalg::{condition_number, first_collinear_column, SpdFactor, CONDITION_WARN};
use crate::optimize::{maximize_bounded, refine_by_score, ScalarSearch};

/// Name used for the intercept term in coefficient tables.
pub const INTERCEPT: &str = "(Intercept)";

/// One population's richness estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessObservation {
    pub id: String,
    pub estimate: f64,
    pub std_error: f64,
    pub covariates: Vec<f64>,
    #[serde(default)]
    pub group: Option<String>,
}

impl RichnessObservation {
    pub fn new(id: impl Into<String>, estimate: f64, std_error: f64, covariates: Vec<f64>) -> Self {
        Self { id: id.into(), estimate, std_error, covariates, group: None }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    fn is_usable(&self) -> bool {
        self.estimate.is_finite() && self.std_error.is_finite()
    }
}

/// A validated set of observations sharing one covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<RichnessObservation>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(observations: Vec<RichnessObservation>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        if observations.len() < 2 {
            return Err(BettaError::InvalidInput(format!(
                "need at least 2 observations, got {}",
                observations.len()
            )));
        }
        for obs in &observations {
            if !obs.estimate.is_finite() {
                return Err(BettaError::InvalidInput(format!("observation `{}` has a non-finite estimate", obs.id)));
            }
            if !(obs.std_error.is_finite() && obs.std_error >= 0.0) {
                return Err(BettaError::InvalidInput(format!(
                    "observation `{}` has an invalid standard error {}",
                    obs.id, obs.std_error
                )));
            }
            if obs.covariates.len() != p {
                return Err(BettaError::InvalidInput(format!(
                    "observation `{}` has {} covariates, expected {p}",
                    obs.id,
                    obs.covariates.len()
                )));
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(BettaError::InvalidInput(format!("observation `{}` has a non-finite covariate", obs.id)));
            }
        }
        Ok(Self { observations, covariate_names })
    }

    /// Build a dataset after dropping rows whose estimate or standard error is
    /// missing or non-finite. Returns the dataset and the number of dropped rows.
    pub fn from_rows_dropping_missing(
        rows: Vec<RichnessObservation>,
        covariate_names: Vec<String>,
    ) -> Result<(Self, usize)> {
        let total = rows.len();
        let kept: Vec<_> = rows.into_iter().filter(RichnessObservation::is_usable).collect();
        let dropped = total - kept.len();
        if dropped > 0 {
            warn!("dropped {dropped} row(s) with missing estimate or standard error");
        }
        Ok((Self::new(kept, covariate_names)?, dropped))
    }

    /// Intercept-only dataset from `(estimate, std_error)` pairs.
    pub fn intercept_only(pairs: &[(f64, f64)]) -> Result<Self> {
        let obs = pairs
            .iter()
            .enumerate()
            .map(|(i, &(c, s))| RichnessObservation::new(format!("obs{}", i + 1), c, s, Vec::new()))
            .collect();
        Self::new(obs, Vec::new())
    }

    pub fn observations(&self) -> &[RichnessObservation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Number of observations.
    pub fn m(&self) -> usize {
        self.observations.len()
    }

    /// Number of covariates, intercept excluded.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.estimate).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.std_error).collect()
    }

    /// Term names with the intercept first.
    pub fn term_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string()).chain(self.covariate_names.iter().cloned()).collect()
    }

    /// `m × (p+1)` design matrix with a leading column of ones.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let (m, k) = (self.m(), self.p() + 1);
        DMatrix::from_fn(m, k, |i, j| if j == 0 { 1.0 } else { self.observations[i].covariates[j - 1] })
    }

    /// Standard errors after the zero floor: `σ̂_i = 0` becomes
    /// `1e-8 · (1 + |Ĉ_i|)`.
    pub fn effective_std_errors(&self) -> Vec<f64> {
        let mut floored = 0;
        let out = self
            .observations
            .iter()
            .map(|o| {
                if o.std_error > 0.0 {
                    o.std_error
                } else {
                    floored += 1;
                    zero_floor(o.estimate)
                }
            })
            .collect();
        if floored > 0 {
            warn!("{floored} zero standard error(s) floored to 1e-8 * (1 + |estimate|)");
        }
        out
    }

    /// Rows ordered canonically by (estimate, std_error, covariates, id), so
    /// that accumulated sums do not depend on input order.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.m()).collect();
        idx.sort_by(|&a, &b| compare_observations(&self.observations[a], &self.observations[b]));
        idx
    }

    /// Reject rank-deficient designs, naming the offending columns.
    pub fn check_full_rank(&self) -> Result<()> {
        let x = self.design_matrix();
        if x.nrows() < x.ncols() {
            return Err(BettaError::RankDeficient {
                column: self.term_names()[x.nrows()].clone(),
                others: self.term_names()[..x.nrows()].to_vec(),
            });
        }
        if let Some((col, deps)) = first_collinear_column(&x) {
            let names = self.term_names();
            return Err(BettaError::RankDeficient {
                column: names[col].clone(),
                others: deps.into_iter().map(|k| names[k].clone()).collect(),
            });
        }
        Ok(())
    }
}

pub(crate) fn zero_floor(estimate: f64) -> f64 {
    1e-8 * (1.0 + estimate.abs())
}

pub(crate) fn compare_observations(a: &RichnessObservation, b: &RichnessObservation) -> Ordering {
    a.estimate
        .total_cmp(&b.estimate)
        .then(a.std_error.total_cmp(&b.std_error))
        .then_with(|| {
            a.covariates
                .iter()
                .zip(&b.covariates)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.group.cmp(&b.group))
        .then_with(|| a.id.cmp(&b.id))
}

/// Fitted hierarchical model.
#[derive(Debug, Clone, PartialEq)]
pub struct BettaFit {
    /// `β̂₀` followed by `β̂`.
    pub beta_hat: Vec<f64>,
    pub sigma_u_sq_hat: f64,
    /// `(X̃ᵀŴ⁻¹X̃)⁻¹`, intercept included.
    pub beta_cov: DMatrix<f64>,
    pub reml_value: f64,
    pub fitted: Vec<f64>,
    /// `(Ĉ_i − fitted_i) / σ̂_i`.
    pub std_residuals: Vec<f64>,
    pub converged: bool,
    pub term_names: Vec<String>,
    pub ids: Vec<String>,
    pub estimates: Vec<f64>,
    /// Standard errors as used in the fit (after the zero floor).
    pub std_errors: Vec<f64>,
    /// Fitted values of the homogeneous model (`σ²_u = 0`), the reference
    /// for the homogeneity Q statistic.
    pub null_fitted: Vec<f64>,
    /// Upper end `U` of the variance search interval.
    pub sigma_u_sq_upper: f64,
    pub evaluations: usize,
}

impl BettaFit {
    pub fn m(&self) -> usize {
        self.estimates.len()
    }

    /// Covariates, intercept excluded.
    pub fn p(&self) -> usize {
        self.beta_hat.len() - 1
    }

    pub fn std_errors_of_beta(&self) -> Vec<f64> {
        (0..self.beta_hat.len()).map(|j| self.beta_cov[(j, j)].sqrt()).collect()
    }
}

/// GLS solution and restricted log-likelihood at one fixed `σ²_u`.
#[derive(Debug, Clone)]
pub struct Profile {
    pub beta: DVector<f64>,
    /// `X̃ᵀW⁻¹X̃`.
    pub information: DMatrix<f64>,
    pub reml_value: f64,
}

/// Precomputed pieces shared by every likelihood evaluation of one dataset.
pub(crate) struct Prepared {
    pub order: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Prepared {
    pub fn new(dataset: &Dataset) -> Self {
        let se = dataset.effective_std_errors();
        Self {
            order: dataset.canonical_order(),
            x: dataset.design_matrix(),
            y: dataset.estimates(),
            variances: se.iter().map(|s| s * s).collect(),
        }
    }

    fn weighted_normal_equations(&self, sigma_u_sq: f64) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.x.ncols();
        let mut info = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for &i in &self.order {
            let w = 1.0 / (sigma_u_sq + self.variances[i]);
            let row = self.x.row(i);
            for a in 0..k {
                let wa = w * row[a];
                rhs[a] += wa * self.y[i];
                for b in 0..=a {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (info, rhs)
    }

    /// `l_R` at `(beta, σ²_u)` with the log-determinant of `info` supplied.
    fn reml_at(&self, beta: &DVector<f64>, sigma_u_sq: f64, info_log_det: f64) -> f64 {
        let mut acc = 0.0;
        for &i in &self.order {
            let v = sigma_u_sq + self.variances[i];
            let r = self.y[i] - (self.x.row(i) * beta)[0];
            acc += v.ln() + r * r / v;
        }
        -0.5 * (acc + info_log_det)
    }

    pub fn profile(&self, sigma_u_sq: f64) -> Result<Profile> {
        let (info, rhs) = self.weighted_normal_equations(sigma_u_sq);
        let factor = SpdFactor::new(&info)?;
        let beta = factor.solve(&rhs);
        let reml_value = self.reml_at(&beta, sigma_u_sq, factor.log_det);
        if !reml_value.is_finite() {
            return Err(BettaError::DegenerateWeights);
        }
        Ok(Profile { beta, information: info, reml_value })
    }

    /// Derivative of the profiled `l_R` with respect to `σ²_u`:
    /// `−½ [Σ 1/v_i − Σ r_i²/v_i² − tr(A⁻¹ Σ x̃_i x̃_iᵀ/v_i²)]` with `A = Σ x̃_i x̃_iᵀ/v_i`.
    /// The coefficients are at their GLS optimum, so they contribute nothing.
    pub fn score(&self, sigma_u_sq: f64) -> Result<f64> {
        let (info, rhs) = self.weighted_normal_equations(sigma_u_sq);
        let factor = SpdFactor::new(&info)?;
        let beta = factor.solve(&rhs);
        let k = self.x.ncols();
        let mut second = DMatrix::zeros(k, k);
        let mut acc = 0.0;
        for &i in &self.order {
            let v = sigma_u_sq + self.variances[i];
            let row = self.x.row(i);
            let r = self.y[i] - (row * &beta)[0];
            acc += 1.0 / v - r * r / (v * v);
            second += row.transpose() * row / (v * v);
        }
        let trace = (factor.solve_matrix(&second)).trace();
        Ok(-0.5 * (acc - trace))
    }

    pub(crate) fn upper_bound(&self) -> f64 {
        let var = sample_variance(&self.y);
        let min_var = self.variances.iter().cloned().fold(f64::INFINITY, f64::min);
        (10.0 * var).max(min_var + 1.0)
    }
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Restricted log-likelihood
/// `−½ { Σ [ln(σ²_u+σ̂²_i) + (Ĉ_i − x̃_iᵀβ)²/(σ²_u+σ̂²_i)] + ln det Σ x̃_i x̃_iᵀ/(σ²_u+σ̂²_i) }`.
pub fn restricted_log_likelihood(dataset: &Dataset, beta: &[f64], sigma_u_sq: f64) -> Result<f64> {
    if !(sigma_u_sq >= 0.0) {
        return Err(BettaError::InvalidInput(format!("sigma_u_sq must be >= 0, got {sigma_u_sq}")));
    }
    if beta.len() != dataset.p() + 1 {
        return Err(BettaError::InvalidInput(format!(
            "beta has length {}, expected {}",
            beta.len(),
            dataset.p() + 1
        )));
    }
    let prep = Prepared::new(dataset);
    let (info, _) = prep.weighted_normal_equations(sigma_u_sq);
    let log_det = match SpdFactor::new(&info) {
        Ok(f) => f.log_det,
        Err(_) => return Err(BettaError::DegenerateWeights),
    };
    let value = prep.reml_at(&DVector::from_column_slice(beta), sigma_u_sq, log_det);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(BettaError::DegenerateWeights)
    }
}

/// GLS coefficients and profiled `l_R` at a fixed `σ²_u`.
pub fn profile_at(dataset: &Dataset, sigma_u_sq: f64) -> Result<Profile> {
    if !(sigma_u_sq >= 0.0) {
        return Err(BettaError::InvalidInput(format!("sigma_u_sq must be >= 0, got {sigma_u_sq}")));
    }
    Prepared::new(dataset).profile(sigma_u_sq)
}

/// Upper end of the `σ²_u` search interval:
/// `max(10 · Var(Ĉ), min σ̂²_i + 1)`.
pub fn sigma_u_sq_upper_bound(dataset: &Dataset) -> f64 {
    Prepared::new(dataset).upper_bound()
}

pub(crate) fn check_identifiable(dataset: &Dataset) -> Result<()> {
    dataset.check_full_rank()?;
    let (m, p) = (dataset.m(), dataset.p());
    if dataset.observations().iter().all(|o| o.std_error == 0.0) && m <= p + 1 {
        return Err(BettaError::Unidentifiable(format!(
            "all standard errors are zero and m = {m} <= p + 1 = {}",
            p + 1
        )));
    }
    if m < p + 2 {
        warn!("m = {m} <= p + 1 = {}: the homogeneity test is undefined", p + 1);
    }
    Ok(())
}

/// Fit the model by REML with `σ²_u` constrained to `[0, U]`.
pub fn fit_betta(dataset: &Dataset) -> Result<BettaFit> {
    check_identifiable(dataset)?;
    let prep = Prepared::new(dataset);
    let upper = prep.upper_bound();
    let start = sample_variance(&prep.y).clamp(0.0, upper);

    let mut failure = None;
    let opt = maximize_bounded(
        |s| match prep.profile(s) {
            Ok(p) => p.reml_value,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        0.0,
        upper,
        start,
        ScalarSearch::for_upper_bound(upper),
    );
    let search = ScalarSearch::for_upper_bound(upper);
    if !opt.value.is_finite() {
        return Err(failure.unwrap_or(BettaError::DegenerateWeights));
    }

    let mut sigma_u_sq = opt.x;
    if sigma_u_sq > 0.0 && sigma_u_sq < upper {
        let refined = refine_by_score(
            |s| prep.score(s).unwrap_or(f64::NAN),
            sigma_u_sq,
            0.0,
            upper,
            10.0 * search.bracket_width,
        );
        // keep the refinement only if the likelihood agrees it is no worse
        if prep.profile(refined).is_ok_and(|p| p.reml_value >= opt.value - 1e-12 * opt.value.abs()) {
            sigma_u_sq = refined;
        }
    }
    let profile = prep.profile(sigma_u_sq)?;
    let cond = condition_number(&profile.information);
    if cond > CONDITION_WARN {
        warn!("weighted Gram matrix is ill-conditioned (condition number {cond:.3e})");
    }
    let beta_cov = SpdFactor::new(&profile.information)?.inverse();
    let fitted: Vec<f64> = (0..dataset.m()).map(|i| (prep.x.row(i) * &profile.beta)[0]).collect();
    let std_errors: Vec<f64> = prep.variances.iter().map(|v| v.sqrt()).collect();
    let std_residuals = fitted
        .iter()
        .zip(&prep.y)
        .zip(&std_errors)
        .map(|((f, y), s)| (y - f) / s)
        .collect();
    let null_fitted = if sigma_u_sq == 0.0 {
        fitted.clone()
    } else {
        let null = prep.profile(0.0)?;
        (0..dataset.m()).map(|i| (prep.x.row(i) * &null.beta)[0]).collect()
    };

    Ok(BettaFit {
        beta_hat: profile.beta.iter().cloned().collect(),
        sigma_u_sq_hat: sigma_u_sq,
        beta_cov,
        reml_value: profile.reml_value,
        fitted,
        std_residuals,
        converged: opt.converged,
        term_names: dataset.term_names(),
        ids: dataset.observations().iter().map(|o| o.id.clone()).collect(),
        estimates: prep.y.clone(),
        std_errors,
        null_fitted,
        sigma_u_sq_upper: upper,
        evaluations: opt.evaluations,
    })
}
