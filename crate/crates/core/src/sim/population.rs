//! Synthetic multinomial populations built from observed frequency tables.

use serde::{Deserialize, Serialize};

use crate::error::{BettaError, Result};
use crate::io::FrequencyCountTable;
use crate::linalg::compensated_sum;

/// Normalized category probabilities for multinomial resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    probabilities: Vec<f64>,
    source_label: String,
    /// Probability carried by one singleton-weight category, when the source
    /// table had singletons.
    singleton_probability: Option<f64>,
    /// `tail_mass[i] = Σ_{k ≥ i} p_k`, used by the conditional-binomial sampler.
    tail_mass: Vec<f64>,
}

impl SyntheticPopulation {
    pub fn new(probabilities: Vec<f64>, source_label: impl Into<String>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(BettaError::InvalidInput("population probabilities must be positive and finite".into()));
        }
        let total = compensated_sum(probabilities.iter().cloned());
        if (total - 1.0).abs() > 1e-12 {
            return Err(BettaError::InvalidInput(format!("population probabilities sum to {total}, not 1")));
        }
        Ok(Self::from_parts(probabilities, source_label.into(), None))
    }

    fn from_parts(probabilities: Vec<f64>, source_label: String, singleton_probability: Option<f64>) -> Self {
        let mut tail_mass = vec![0.0; probabilities.len()];
        let mut acc = 0.0;
        let mut comp = 0.0;
        for i in (0..probabilities.len()).rev() {
            let v = probabilities[i];
            let t = acc + v;
            if acc.abs() >= v.abs() {
                comp += (acc - t) + v;
            } else {
                comp += (v - t) + acc;
            }
            acc = t;
            tail_mass[i] = acc + comp;
        }
        Self { probabilities, source_label, singleton_probability, tail_mass }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Number of categories `S`.
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn singleton_probability(&self) -> Option<f64> {
        self.singleton_probability
    }

    pub(crate) fn tail_mass(&self) -> &[f64] {
        &self.tail_mass
    }
}

/// One category per observed taxon; a taxon seen `j` times gets probability `j/n`.
pub fn population_from_table(table: &FrequencyCountTable, label: impl Into<String>) -> SyntheticPopulation {
    let n = table.total_reads() as f64;
    let probabilities = table.taxon_abundances().into_iter().map(|j| j as f64 / n).collect();
    let singleton_probability = (table.singletons() > 0).then(|| 1.0 / n);
    SyntheticPopulation::from_parts(probabilities, label.into(), singleton_probability)
}

/// Number of categories added for a `percent_extra` increase over `s`
/// categories: round half up, at least one when the percentage is positive.
pub fn injected_category_count(percent_extra: f64, s: usize) -> usize {
    if percent_extra <= 0.0 {
        return 0;
    }
    ((percent_extra / 100.0 * s as f64 + 0.5).floor() as usize).max(1)
}

/// Add rare categories, each weighted like a singleton of the source table,
/// then renormalize.
pub fn inject_richness_gradient(pop: &SyntheticPopulation, percent_extra: f64) -> Result<SyntheticPopulation> {
    if !(percent_extra >= 0.0 && percent_extra.is_finite()) {
        return Err(BettaError::InvalidInput(format!("percent_extra must be >= 0, got {percent_extra}")));
    }
    let weight = pop.singleton_probability.ok_or(BettaError::NoSingletons)?;
    let extra = injected_category_count(percent_extra, pop.len());
    if extra == 0 {
        return Ok(pop.clone());
    }
    let total = 1.0 + extra as f64 * weight;
    let mut probabilities: Vec<f64> = pop.probabilities.iter().map(|p| p / total).collect();
    probabilities.extend(std::iter::repeat_n(weight / total, extra));
    Ok(SyntheticPopulation::from_parts(
        probabilities,
        format!("{}+{}%", pop.source_label, percent_extra),
        Some(weight / total),
    ))
}

/// Empirical read counts from which replicate sample sizes are redrawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizeDistribution {
    observed_sizes: Vec<u64>,
}

impl SampleSizeDistribution {
    pub fn new(observed_sizes: Vec<u64>) -> Result<Self> {
        if observed_sizes.is_empty() || observed_sizes.contains(&0) {
            return Err(BettaError::InvalidInput("sample sizes must be a nonempty list of positive integers".into()));
        }
        Ok(Self { observed_sizes })
    }

    pub fn fixed(size: u64) -> Result<Self> {
        Self::new(vec![size])
    }

    pub fn sizes(&self) -> &[u64] {
        &self.observed_sizes
    }

    /// Uniform draw with replacement from the observed sizes.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.observed_sizes[rng.random_range(0..self.observed_sizes.len())]
    }
}
