//! Grouped random-intercept variant of the richness model.
//!
//! Marginal covariance `V = diag(σ̂²_i + σ²_u) + σ²_g · Z Zᵀ` with `Z` the
//! group indicator matrix. `V` is block diagonal by group with each block a
//! diagonal plus a rank-one term, so inverses and determinants are evaluated
//! group by group in closed form.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{BettaError, Result};
use crate::inference::{global_test_from, wald_tests_from, TestResult};
use crate::linalg::{condition_number, SpdFactor, CONDITION_WARN};
use crate::model::{check_identifiable, fit_betta, sample_variance, Dataset, Prepared, Profile};
use crate::optimize::{maximize_bounded, ScalarSearch};

/// A dataset whose observations are partitioned into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    base: Dataset,
    /// Sorted distinct group labels.
    levels: Vec<String>,
    /// Level index of each observation.
    membership: Vec<usize>,
}

impl GroupedDataset {
    pub fn new(base: Dataset, groups: Vec<String>) -> Result<Self> {
        if groups.len() != base.m() {
            return Err(BettaError::InvalidInput(format!(
                "{} group labels for {} observations",
                groups.len(),
                base.m()
            )));
        }
        let mut levels = groups.clone();
        levels.sort();
        levels.dedup();
        let membership = groups
            .iter()
            .map(|g| levels.binary_search(g).expect("label present"))
            .collect();
        Ok(Self { base, levels, membership })
    }

    /// Use the `group` field carried by each observation.
    pub fn from_dataset(base: Dataset) -> Result<Self> {
        let groups = base
            .observations()
            .iter()
            .map(|o| {
                o.group
                    .clone()
                    .ok_or_else(|| BettaError::InvalidInput(format!("observation `{}` has no group", o.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(base, groups)
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn n_groups(&self) -> usize {
        self.levels.len()
    }

    /// Dense marginal covariance at the given variance components.
    pub fn marginal_covariance(&self, sigma_u_sq: f64, sigma_g_sq: f64) -> DMatrix<f64> {
        let se = self.base.effective_std_errors();
        let m = self.base.m();
        DMatrix::from_fn(m, m, |i, j| {
            let mut v = if self.membership[i] == self.membership[j] { sigma_g_sq } else { 0.0 };
            if i == j {
                v += se[i] * se[i] + sigma_u_sq;
            }
            v
        })
    }

    /// Error when a covariate is constant within every group, i.e. lies in the
    /// column space of the group indicators.
    fn check_confounding(&self) -> Result<()> {
        let names = self.base.covariate_names();
        for (j, name) in names.iter().enumerate() {
            let mut first: Vec<Option<f64>> = vec![None; self.n_groups()];
            let mut constant = true;
            for (obs, &g) in self.base.observations().iter().zip(&self.membership) {
                let v = obs.covariates[j];
                match first[g] {
                    None => first[g] = Some(v),
                    Some(f) if (f - v).abs() > 1e-12 * (1.0 + f.abs()) => {
                        constant = false;
                        break;
                    }
                    _ => {}
                }
            }
            if constant {
                return Err(BettaError::Confounded(name.clone()));
            }
        }
        Ok(())
    }
}

/// Fitted grouped model.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFit {
    pub beta_hat: Vec<f64>,
    pub sigma_u_sq_hat: f64,
    /// Variance of the group random intercepts.
    pub sigma_g_sq_hat: f64,
    /// `(X̃ᵀV̂⁻¹X̃)⁻¹`.
    pub beta_cov: DMatrix<f64>,
    pub reml_value: f64,
    pub converged: bool,
    pub term_names: Vec<String>,
    pub group_levels: Vec<String>,
    pub fitted: Vec<f64>,
    /// True when a single group forced the fixed-effects model.
    pub reduced: bool,
}

impl MixedFit {
    pub fn wald_tests(&self) -> Result<Vec<TestResult>> {
        wald_tests_from(&self.beta_hat, &self.beta_cov, &self.term_names)
    }

    pub fn global_test(&self) -> Result<TestResult> {
        global_test_from(&self.beta_hat, &self.beta_cov)
    }

    pub fn std_errors_of_beta(&self) -> Vec<f64> {
        (0..self.beta_hat.len()).map(|j| self.beta_cov[(j, j)].sqrt()).collect()
    }
}

struct MixedPrepared {
    base: Prepared,
    membership: Vec<usize>,
    n_groups: usize,
}

impl MixedPrepared {
    fn new(gd: &GroupedDataset) -> Self {
        Self {
            base: Prepared::new(&gd.base),
            membership: gd.membership.clone(),
            n_groups: gd.n_groups(),
        }
    }

    fn profile(&self, sigma_u_sq: f64, sigma_g_sq: f64) -> Result<Profile> {
        let x = &self.base.x;
        let y = &self.base.y;
        let k = x.ncols();
        let g = self.n_groups;

        let mut info = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        let mut log_det_v = 0.0;
        let mut s = vec![0.0; g];
        let mut a = vec![DVector::<f64>::zeros(k); g];
        let mut t = vec![0.0; g];
        for &i in &self.base.order {
            let d = sigma_u_sq + self.base.variances[i];
            let w = 1.0 / d;
            log_det_v += d.ln();
            let gi = self.membership[i];
            s[gi] += w;
            t[gi] += w * y[i];
            let row = x.row(i);
            for p in 0..k {
                let wp = w * row[p];
                a[gi][p] += wp;
                rhs[p] += wp * y[i];
                for q in 0..=p {
                    info[(p, q)] += wp * row[q];
                }
            }
        }
        for p in 0..k {
            for q in 0..p {
                info[(q, p)] = info[(p, q)];
            }
        }
        let mut c = vec![0.0; g];
        for gi in 0..g {
            let denom = 1.0 + sigma_g_sq * s[gi];
            log_det_v += denom.ln();
            c[gi] = sigma_g_sq / denom;
            info -= c[gi] * &a[gi] * a[gi].transpose();
            rhs -= c[gi] * t[gi] * &a[gi];
        }
        let factor = SpdFactor::new(&info)?;
        let beta = factor.solve(&rhs);

        let mut quad = 0.0;
        let mut rsum = vec![0.0; g];
        for &i in &self.base.order {
            let d = sigma_u_sq + self.base.variances[i];
            let r = y[i] - (x.row(i) * &beta)[0];
            quad += r * r / d;
            rsum[self.membership[i]] += r / d;
        }
        for gi in 0..g {
            quad -= c[gi] * rsum[gi] * rsum[gi];
        }
        let reml_value = -0.5 * (log_det_v + quad + factor.log_det);
        if !reml_value.is_finite() {
            return Err(BettaError::DegenerateWeights);
        }
        Ok(Profile { beta, information: info, reml_value })
    }
}

/// GLS coefficients and restricted log-likelihood at fixed `(σ²_u, σ²_g)`.
pub fn profile_mixed(gd: &GroupedDataset, sigma_u_sq: f64, sigma_g_sq: f64) -> Result<Profile> {
    if !(sigma_u_sq >= 0.0 && sigma_g_sq >= 0.0) {
        return Err(BettaError::InvalidInput("variance components must be >= 0".into()));
    }
    MixedPrepared::new(gd).profile(sigma_u_sq, sigma_g_sq)
}

/// REML fit with nested bounded searches: outer over `σ²_g`, inner over `σ²_u`.
pub fn fit_betta_random(gd: &GroupedDataset) -> Result<MixedFit> {
    check_identifiable(&gd.base)?;
    if gd.n_groups() < 2 {
        warn!("grouping factor has a single level; fitting the fixed-effects model");
        let fit = fit_betta(&gd.base)?;
        return Ok(MixedFit {
            beta_hat: fit.beta_hat,
            sigma_u_sq_hat: fit.sigma_u_sq_hat,
            sigma_g_sq_hat: 0.0,
            beta_cov: fit.beta_cov,
            reml_value: fit.reml_value,
            converged: fit.converged,
            term_names: fit.term_names,
            group_levels: gd.levels.clone(),
            fitted: fit.fitted,
            reduced: true,
        });
    }
    gd.check_confounding()?;

    let prep = MixedPrepared::new(gd);
    let upper = prep.base.upper_bound();
    let start_u = sample_variance(&prep.base.y).clamp(0.0, upper);
    let start_g = {
        let mut sums = vec![(0.0, 0usize); gd.n_groups()];
        for (&y, &g) in prep.base.y.iter().zip(&prep.membership) {
            sums[g].0 += y;
            sums[g].1 += 1;
        }
        let means: Vec<f64> = sums.iter().map(|(s, n)| s / *n as f64).collect();
        sample_variance(&means).clamp(0.0, upper)
    };
    let search = ScalarSearch::for_upper_bound(upper);

    let inner = |sigma_g_sq: f64| {
        maximize_bounded(
            |su| prep.profile(su, sigma_g_sq).map(|p| p.reml_value).unwrap_or(f64::NEG_INFINITY),
            0.0,
            upper,
            start_u,
            search,
        )
    };
    let outer = maximize_bounded(|sg| inner(sg).value, 0.0, upper, start_g, search);
    if !outer.value.is_finite() {
        return Err(BettaError::DegenerateWeights);
    }
    let sigma_g_sq = outer.x;
    let inner_opt = inner(sigma_g_sq);
    let sigma_u_sq = inner_opt.x;
    let profile = prep.profile(sigma_u_sq, sigma_g_sq)?;
    let cond = condition_number(&profile.information);
    if cond > CONDITION_WARN {
        warn!("weighted Gram matrix is ill-conditioned (condition number {cond:.3e})");
    }
    let beta_cov = SpdFactor::new(&profile.information)?.inverse();
    let fitted = (0..gd.base.m()).map(|i| (prep.base.x.row(i) * &profile.beta)[0]).collect();

    Ok(MixedFit {
        beta_hat: profile.beta.iter().cloned().collect(),
        sigma_u_sq_hat: sigma_u_sq,
        sigma_g_sq_hat: sigma_g_sq,
        beta_cov,
        reml_value: profile.reml_value,
        converged: outer.converged && inner_opt.converged,
        term_names: gd.base.term_names(),
        group_levels: gd.levels.clone(),
        fitted,
        reduced: false,
    })
}
