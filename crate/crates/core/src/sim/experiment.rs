//! Monte Carlo size and power experiments.
//!
//! An experiment is `n_datasets` independent datasets of
//! `replicates_per_dataset` richness estimates each. Covariate experiments
//! assign every replicate a covariate value (a permutation of the grid, or a
//! half/half two-category split), fit the hierarchical model and the
//! observed-richness regression, and record whether `H₀: β₁ = 0` is rejected.
//! Homogeneity experiments fit the intercept-only model and record the Q test.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::population::{inject_richness_gradient, SampleSizeDistribution, SyntheticPopulation};
use super::report::{ExperimentReport, ReportRow};
use super::resample::resample_with_sizes;
use super::rng::{substream, TAG_DATASET, TAG_REPLICATE};
use crate::error::{BettaError, Result};
use crate::estimator::Estimator;
use crate::inference::{homogeneity_test, wald_tests};
use crate::model::{fit_betta, zero_floor, Dataset, RichnessObservation};
use crate::special::student_t_two_sided;

/// Significance levels used when none are configured.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.01, 0.05, 0.10];

/// Give up on a replicate after this many consecutive estimator failures.
const MAX_ATTEMPTS: u64 = 1000;

pub const METHOD_BETTA: &str = "betta";
pub const METHOD_REGRESSION: &str = "regression";
pub const METHOD_HOMOGENEITY: &str = "homogeneity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateKind {
    /// One grid value per replicate, randomly permuted within each dataset.
    Continuous,
    /// First half of the replicates in category A (0), the rest in B (1).
    TwoCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Size,
    Power,
    Homogeneity,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Size => "size",
            ExperimentKind::Power => "power",
            ExperimentKind::Homogeneity => "homogeneity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub replicates_per_dataset: usize,
    pub n_datasets: usize,
    pub covariate_kind: CovariateKind,
    /// Covariate values for the continuous design; length must equal
    /// `replicates_per_dataset`.
    pub grid: Vec<f64>,
    pub alpha_levels: Vec<f64>,
    pub seed: u64,
    pub estimator: Estimator,
    /// Worker threads; `None` uses the global pool. Never affects results.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Continuous design on the grid `{step, 2·step, …, replicates·step}`.
    pub fn continuous(replicates: usize, n_datasets: usize, seed: u64, estimator: Estimator) -> Self {
        let step = 100.0 / replicates as f64;
        Self {
            replicates_per_dataset: replicates,
            n_datasets,
            covariate_kind: CovariateKind::Continuous,
            grid: (1..=replicates).map(|k| k as f64 * step).collect(),
            alpha_levels: DEFAULT_ALPHAS.to_vec(),
            seed,
            estimator,
            workers: None,
        }
    }

    pub fn two_category(replicates: usize, n_datasets: usize, seed: u64, estimator: Estimator) -> Self {
        Self {
            covariate_kind: CovariateKind::TwoCategory,
            grid: Vec::new(),
            ..Self::continuous(replicates, n_datasets, seed, estimator)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates_per_dataset < 3 {
            return Err(BettaError::Config(format!(
                "replicates_per_dataset must be >= 3, got {}",
                self.replicates_per_dataset
            )));
        }
        if self.n_datasets == 0 {
            return Err(BettaError::Config("n_datasets must be positive".into()));
        }
        if self.alpha_levels.is_empty() || self.alpha_levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(BettaError::Config("alpha levels must lie in (0, 1)".into()));
        }
        if self.covariate_kind == CovariateKind::Continuous && self.grid.len() != self.replicates_per_dataset {
            return Err(BettaError::Config(format!(
                "grid has {} values but replicates_per_dataset is {}",
                self.grid.len(),
                self.replicates_per_dataset
            )));
        }
        if self.workers == Some(0) {
            return Err(BettaError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Stable one-line description of everything that determines the results.
    pub fn echo(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let kind = match self.covariate_kind {
            CovariateKind::Continuous => "continuous",
            CovariateKind::TwoCategory => "two-category",
        };
        format!(
            "replicates={};datasets={};covariate={kind};grid={};alphas={};seed={};estimator={}",
            self.replicates_per_dataset,
            self.n_datasets,
            join(&self.grid),
            join(&self.alpha_levels),
            self.seed,
            self.estimator
        )
    }
}

/// Injected richness increase per replicate in a power experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gradient {
    /// Percent extra categories for each grid position (aligned with `grid`).
    Continuous(Vec<f64>),
    /// Category B gets this percent extra; category A is the unchanged source.
    Contrast(f64),
}

impl Gradient {
    /// Percents proportional to the grid, reaching `max_percent` at the
    /// largest absolute grid value.
    pub fn proportional_to_grid(max_percent: f64, grid: &[f64]) -> Self {
        let top = grid.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        let scale = if top > 0.0 { max_percent / top } else { 0.0 };
        Gradient::Continuous(grid.iter().map(|g| g.abs() * scale).collect())
    }

    fn percents(&self) -> Vec<f64> {
        match self {
            Gradient::Continuous(p) => p.clone(),
            Gradient::Contrast(p) => vec![0.0, *p],
        }
    }

    fn describe(&self) -> String {
        match self {
            Gradient::Continuous(p) => {
                format!("continuous:{}", p.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
            }
            Gradient::Contrast(p) => format!("contrast:{p}"),
        }
    }
}

/// One simulated richness estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateDraw {
    pub estimate: f64,
    pub std_error: f64,
    /// Observed richness `c`, the response of the regression comparator.
    pub observed: f64,
}

/// Generator of replicate richness estimates.
pub trait ReplicateSource: Sync {
    /// Draw replicate number `replicate` of a dataset with `percent` extra
    /// richness injected.
    fn draw(&self, replicate: usize, percent: f64, rng: &mut ChaCha8Rng) -> Result<ReplicateDraw>;

    fn describe(&self) -> String;
}

/// Multinomial redraws from a synthetic population, estimated per table.
pub struct MultinomialSource<'a> {
    base: &'a SyntheticPopulation,
    sizes: &'a SampleSizeDistribution,
    estimator: Estimator,
    injected: Vec<(f64, SyntheticPopulation)>,
}

impl<'a> MultinomialSource<'a> {
    pub fn new(base: &'a SyntheticPopulation, sizes: &'a SampleSizeDistribution, estimator: Estimator) -> Self {
        Self { base, sizes, estimator, injected: Vec::new() }
    }

    /// Precompute injected populations for the given percents.
    pub fn with_percents(mut self, percents: &[f64]) -> Result<Self> {
        for &p in percents {
            if p > 0.0 && !self.injected.iter().any(|(q, _)| *q == p) {
                self.injected.push((p, inject_richness_gradient(self.base, p)?));
            }
        }
        Ok(self)
    }

    fn population(&self, percent: f64) -> Result<std::borrow::Cow<'_, SyntheticPopulation>> {
        if percent <= 0.0 {
            return Ok(std::borrow::Cow::Borrowed(self.base));
        }
        match self.injected.iter().find(|(q, _)| *q == percent) {
            Some((_, pop)) => Ok(std::borrow::Cow::Borrowed(pop)),
            None => Ok(std::borrow::Cow::Owned(inject_richness_gradient(self.base, percent)?)),
        }
    }
}

impl ReplicateSource for MultinomialSource<'_> {
    fn draw(&self, _replicate: usize, percent: f64, rng: &mut ChaCha8Rng) -> Result<ReplicateDraw> {
        let pop = self.population(percent)?;
        let table = resample_with_sizes(&pop, self.sizes, rng);
        let est = self.estimator.estimate(&table)?;
        Ok(ReplicateDraw {
            estimate: est.estimate,
            std_error: est.std_error,
            observed: table.observed_richness() as f64,
        })
    }

    fn describe(&self) -> String {
        format!(
            "multinomial:{}:categories={}:sizes={}",
            self.base.source_label(),
            self.base.len(),
            self.sizes.sizes().iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
        )
    }
}

/// Normal-theory generation: `Ĉ = mean + effect · percent + σ̂ Z` with
/// truthful standard errors cycled over `std_errors`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalTheorySource {
    pub mean: f64,
    pub std_errors: Vec<f64>,
    /// Richness added per percent of injection.
    pub effect_per_percent: f64,
}

impl ReplicateSource for NormalTheorySource {
    fn draw(&self, replicate: usize, percent: f64, rng: &mut ChaCha8Rng) -> Result<ReplicateDraw> {
        let se = self.std_errors[replicate % self.std_errors.len()];
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        let estimate = self.mean + self.effect_per_percent * percent + se * z;
        Ok(ReplicateDraw { estimate, std_error: se, observed: estimate })
    }

    fn describe(&self) -> String {
        format!(
            "normal:mean={}:effect={}:se={}",
            self.mean,
            self.effect_per_percent,
            self.std_errors.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
        )
    }
}

/// Statistic and p-value of one method on one dataset (`NaN` when the fit failed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub dataset: usize,
    pub methods: Vec<MethodOutcome>,
    /// Replicates regenerated because the estimator failed.
    pub replicate_failures: usize,
}

/// OLS slope t-test of `y` on `x`: returns `(t, two-sided p)`.
pub fn observed_richness_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let dof = n - 2.0;
    let scale = (sse / dof / sxx).sqrt();
    if scale == 0.0 {
        return if slope == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(slope), 0.0) };
    }
    let t = slope / scale;
    (t, student_t_two_sided(t, dof))
}

fn draw_replicate<S: ReplicateSource>(
    source: &S,
    seed: u64,
    dataset: usize,
    replicate: usize,
    percent: f64,
    failures: &mut usize,
) -> Result<ReplicateDraw> {
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = substream(seed, &[TAG_REPLICATE, dataset as u64, replicate as u64, attempt]);
        match source.draw(replicate, percent, &mut rng) {
            Ok(d) if d.estimate.is_finite() && d.std_error.is_finite() && d.std_error >= 0.0 => return Ok(d),
            Ok(_) => {
                *failures += 1;
                last_err = Some(BettaError::EstimatorFailed("non-finite estimate".into()));
            }
            Err(e @ (BettaError::EstimatorFailed(_) | BettaError::EstimatorProtocol(_))) => {
                *failures += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| BettaError::EstimatorFailed("estimator kept failing".into())))
}

fn observation(i: usize, d: &ReplicateDraw, covariates: Vec<f64>) -> RichnessObservation {
    // floor here rather than in the fit so simulations do not log per dataset
    let se = if d.std_error > 0.0 { d.std_error } else { zero_floor(d.estimate) };
    RichnessObservation::new(format!("r{}", i + 1), d.estimate, se, covariates)
}

fn failed(method: &str) -> MethodOutcome {
    MethodOutcome { method: method.into(), statistic: f64::NAN, p_value: f64::NAN }
}

fn covariate_dataset<S: ReplicateSource>(
    source: &S,
    config: &ExperimentConfig,
    gradient: Option<&Gradient>,
    d: usize,
) -> Result<DatasetOutcome> {
    let r = config.replicates_per_dataset;
    let levels: Vec<usize> = match config.covariate_kind {
        CovariateKind::Continuous => {
            let mut perm: Vec<usize> = (0..r).collect();
            perm.shuffle(&mut substream(config.seed, &[TAG_DATASET, d as u64]));
            perm
        }
        CovariateKind::TwoCategory => (0..r).map(|i| usize::from(i >= r / 2)).collect(),
    };
    let mut failures = 0;
    let mut obs = Vec::with_capacity(r);
    let mut xs = Vec::with_capacity(r);
    let mut observed = Vec::with_capacity(r);
    for (rep, &level) in levels.iter().enumerate() {
        let x = match config.covariate_kind {
            CovariateKind::Continuous => config.grid[level],
            CovariateKind::TwoCategory => level as f64,
        };
        let percent = match gradient {
            None => 0.0,
            Some(Gradient::Continuous(p)) => p[level],
            Some(Gradient::Contrast(p)) if level == 1 => *p,
            Some(Gradient::Contrast(_)) => 0.0,
        };
        let draw = draw_replicate(source, config.seed, d, rep, percent, &mut failures)?;
        obs.push(observation(rep, &draw, vec![x]));
        xs.push(x);
        observed.push(draw.observed);
    }

    let betta = Dataset::new(obs, vec!["x".into()])
        .and_then(|ds| fit_betta(&ds))
        .and_then(|fit| wald_tests(&fit))
        .map(|tests| MethodOutcome {
            method: METHOD_BETTA.into(),
            statistic: tests[1].statistic,
            p_value: tests[1].p_value,
        })
        .unwrap_or_else(|_| failed(METHOD_BETTA));
    let (t, p) = observed_richness_regression(&xs, &observed);
    let regression = MethodOutcome { method: METHOD_REGRESSION.into(), statistic: t, p_value: p };
    Ok(DatasetOutcome { dataset: d, methods: vec![betta, regression], replicate_failures: failures })
}

fn homogeneity_dataset<S: ReplicateSource>(
    source: &S,
    config: &ExperimentConfig,
    percent: f64,
    d: usize,
) -> Result<DatasetOutcome> {
    let r = config.replicates_per_dataset;
    let mut failures = 0;
    let mut obs = Vec::with_capacity(r);
    for rep in 0..r {
        let p = if rep >= r / 2 { percent } else { 0.0 };
        let draw = draw_replicate(source, config.seed, d, rep, p, &mut failures)?;
        obs.push(observation(rep, &draw, Vec::new()));
    }
    let q = Dataset::new(obs, Vec::new())
        .and_then(|ds| fit_betta(&ds))
        .and_then(|fit| homogeneity_test(&fit))
        .map(|t| MethodOutcome { method: METHOD_HOMOGENEITY.into(), statistic: t.statistic, p_value: t.p_value })
        .unwrap_or_else(|_| failed(METHOD_HOMOGENEITY));
    Ok(DatasetOutcome { dataset: d, methods: vec![q], replicate_failures: failures })
}

fn run_datasets<F>(config: &ExperimentConfig, job: F) -> Result<Vec<DatasetOutcome>>
where
    F: Fn(usize) -> Result<DatasetOutcome> + Sync + Send,
{
    let run = || (0..config.n_datasets).into_par_iter().map(&job).collect::<Result<Vec<_>>>();
    match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BettaError::Config(format!("could not build worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn summarize(
    kind: ExperimentKind,
    source: String,
    design: String,
    config: &ExperimentConfig,
    methods: &[&str],
    outcomes: Vec<DatasetOutcome>,
) -> ExperimentReport {
    let n = outcomes.len();
    let mut fit_failures = BTreeMap::new();
    let mut rows = Vec::new();
    for &method in methods {
        let pvals: Vec<f64> = outcomes
            .iter()
            .map(|o| o.methods.iter().find(|m| m.method == method).map_or(f64::NAN, |m| m.p_value))
            .collect();
        fit_failures.insert(method.to_string(), pvals.iter().filter(|p| p.is_nan()).count());
        for &alpha in &config.alpha_levels {
            let rejections = pvals.iter().filter(|&&p| p <= alpha).count();
            rows.push(ReportRow::new(method, alpha, rejections, n, config.seed));
        }
    }
    ExperimentReport {
        kind,
        source,
        design,
        config: config.echo(),
        seed: config.seed,
        n_datasets: n,
        replicate_failures: outcomes.iter().map(|o| o.replicate_failures).sum(),
        fit_failures,
        rows,
        outcomes,
    }
}

/// Covariate-test experiment over an arbitrary replicate source. `gradient`
/// of `None` is a size experiment.
pub fn run_covariate_experiment<S: ReplicateSource>(
    source: &S,
    config: &ExperimentConfig,
    gradient: Option<&Gradient>,
) -> Result<ExperimentReport> {
    config.validate()?;
    match (gradient, config.covariate_kind) {
        (Some(Gradient::Continuous(p)), CovariateKind::Continuous) if p.len() != config.grid.len() => {
            return Err(BettaError::Config(format!(
                "gradient has {} values but the grid has {}",
                p.len(),
                config.grid.len()
            )));
        }
        (Some(Gradient::Continuous(_)), CovariateKind::TwoCategory) => {
            return Err(BettaError::Config("a continuous gradient needs a continuous covariate".into()));
        }
        (Some(Gradient::Contrast(_)), CovariateKind::Continuous) => {
            return Err(BettaError::Config("a single-percent contrast needs a two-category covariate".into()));
        }
        _ => {}
    }
    if let Some(g) = gradient {
        if g.percents().iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(BettaError::Config("gradient percents must be >= 0".into()));
        }
    }
    let outcomes = run_datasets(config, |d| covariate_dataset(source, config, gradient, d))?;
    let (kind, design) = match gradient {
        None => (ExperimentKind::Size, "null".to_string()),
        Some(g) => (ExperimentKind::Power, g.describe()),
    };
    Ok(summarize(kind, source.describe(), design, config, &[METHOD_BETTA, METHOD_REGRESSION], outcomes))
}

/// Homogeneity experiment over an arbitrary source: the first half of each
/// dataset is drawn at the baseline, the second half with `percent` extra.
pub fn run_homogeneity_with<S: ReplicateSource>(
    source: &S,
    config: &ExperimentConfig,
    percent: f64,
) -> Result<ExperimentReport> {
    config.validate()?;
    if !(percent >= 0.0 && percent.is_finite()) {
        return Err(BettaError::Config("percent must be >= 0".into()));
    }
    let outcomes = run_datasets(config, |d| homogeneity_dataset(source, config, percent, d))?;
    Ok(summarize(
        ExperimentKind::Homogeneity,
        source.describe(),
        format!("split:{percent}"),
        config,
        &[METHOD_HOMOGENEITY],
        outcomes,
    ))
}

/// Empirical size of the covariate tests under multinomial redraws.
pub fn run_size_experiment(
    pop: &SyntheticPopulation,
    sizes: &SampleSizeDistribution,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let source = MultinomialSource::new(pop, sizes, config.estimator.clone());
    run_covariate_experiment(&source, config, None)
}

/// Empirical power of the covariate tests with rare taxa injected along the
/// covariate.
pub fn run_power_experiment(
    pop: &SyntheticPopulation,
    sizes: &SampleSizeDistribution,
    config: &ExperimentConfig,
    gradient: &Gradient,
) -> Result<ExperimentReport> {
    let source = MultinomialSource::new(pop, sizes, config.estimator.clone()).with_percents(&gradient.percents())?;
    run_covariate_experiment(&source, config, Some(gradient))
}

/// Empirical size (`percent = 0`) or power of the homogeneity test.
pub fn run_homogeneity_experiment(
    pop: &SyntheticPopulation,
    sizes: &SampleSizeDistribution,
    config: &ExperimentConfig,
    percent: f64,
) -> Result<ExperimentReport> {
    let source = MultinomialSource::new(pop, sizes, config.estimator.clone()).with_percents(&[percent])?;
    run_homogeneity_with(&source, config, percent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::FrequencyCountTable;
    use crate::sim::population::population_from_table;

    fn small_pop() -> SyntheticPopulation {
        let t = FrequencyCountTable::from_pairs([(1, 60), (2, 25), (3, 10), (8, 5), (40, 2)]).unwrap();
        population_from_table(&t, "small")
    }

    #[test]
    fn regression_matches_hand_computation() {
        // y = 2x exactly except one point
        let (t, p) = observed_richness_regression(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 9.0]);
        // slope 2.3, sse 0.3, se = sqrt(0.3/2/5)
        assert!((t - 2.3 / (0.03f64).sqrt()).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.05);
        let (t, p) = observed_richness_regression(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]);
        assert_eq!((t, p), (0.0, 1.0));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::continuous(10, 5, 1, Estimator::Chao1);
        assert!(c.validate().is_ok());
        c.grid.pop();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::two_category(2, 5, 1, Estimator::Chao1);
        assert!(c.validate().is_err());
        c.replicates_per_dataset = 4;
        c.alpha_levels = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_grid_is_ten_to_hundred() {
        let c = ExperimentConfig::continuous(10, 1, 1, Estimator::Chao1);
        assert_eq!(c.grid, (1..=10).map(|k| 10.0 * k as f64).collect::<Vec<_>>());
    }

    #[test]
    fn report_rates_nested_and_bounded() {
        let pop = small_pop();
        let sizes = SampleSizeDistribution::new(vec![150, 300, 600]).unwrap();
        let config = ExperimentConfig::continuous(10, 40, 11, Estimator::Chao1);
        let rep = run_size_experiment(&pop, &sizes, &config).unwrap();
        assert_eq!(rep.rows.len(), 6);
        for method in [METHOD_BETTA, METHOD_REGRESSION] {
            let rates: Vec<f64> = rep.rows.iter().filter(|r| r.method == method).map(|r| r.rate).collect();
            assert!(rates.windows(2).all(|w| w[0] <= w[1]));
            assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let pop = small_pop();
        let sizes = SampleSizeDistribution::new(vec![150, 300]).unwrap();
        let mut config = ExperimentConfig::two_category(6, 16, 5, Estimator::Chao1);
        config.workers = Some(1);
        let a = run_power_experiment(&pop, &sizes, &config, &Gradient::Contrast(10.0)).unwrap();
        config.workers = Some(4);
        let b = run_power_experiment(&pop, &sizes, &config, &Gradient::Contrast(10.0)).unwrap();
        assert_eq!(a.to_delimited(), b.to_delimited());
        assert_eq!(a.outcomes, b.outcomes);
    }

    #[test]
    fn mismatched_gradient_rejected() {
        let pop = small_pop();
        let sizes = SampleSizeDistribution::fixed(100).unwrap();
        let config = ExperimentConfig::continuous(5, 2, 1, Estimator::Chao1);
        assert!(run_power_experiment(&pop, &sizes, &config, &Gradient::Contrast(5.0)).is_err());
        assert!(run_power_experiment(&pop, &sizes, &config, &Gradient::Continuous(vec![1.0; 3])).is_err());
    }

    struct Flaky;
    impl ReplicateSource for Flaky {
        fn draw(&self, _r: usize, _p: f64, rng: &mut ChaCha8Rng) -> Result<ReplicateDraw> {
            use rand::Rng;
            if rng.random_bool(0.3) {
                Err(BettaError::EstimatorFailed("flaky".into()))
            } else {
                let v: f64 = rng.random_range(90.0..110.0);
                Ok(ReplicateDraw { estimate: v, std_error: 5.0, observed: v })
            }
        }
        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn failed_replicates_are_regenerated_and_counted() {
        let config = ExperimentConfig::continuous(10, 20, 3, Estimator::Chao1);
        let rep = run_covariate_experiment(&Flaky, &config, None).unwrap();
        assert!(rep.replicate_failures > 0);
        assert_eq!(rep.n_datasets, 20);
        assert_eq!(rep.fit_failures[METHOD_BETTA], 0);
    }

    #[test]
    fn homogeneity_uses_intercept_only_dof() {
        let src = NormalTheorySource { mean: 500.0, std_errors: vec![10.0, 20.0], effect_per_percent: 0.0 };
        let config = ExperimentConfig::continuous(8, 3, 2, Estimator::Chao1);
        let rep = run_homogeneity_with(&src, &config, 0.0).unwrap();
        // Q against chi-square with m - 1 = 7 dof
        for o in &rep.outcomes {
            let m = &o.methods[0];
            assert!((crate::special::chisq_upper_tail(m.statistic, 7) - m.p_value).abs() < 1e-15);
        }
    }
}
