//! Simulation harness: synthetic populations, multinomial resampling,
//! size/power experiments and the parametric bootstrap.
//!
//! All randomness comes from counter-based substreams keyed by the run seed
//! and the position of the draw, so results do not depend on thread count or
//! scheduling.

mod bootstrap;
mod experiment;
mod population;
mod report;
mod resample;
mod rng;

pub use bootstrap::{parametric_bootstrap_se, BootstrapSummary, MIN_RESAMPLES};
pub use experiment::{
    observed_richness_regression, run_covariate_experiment, run_homogeneity_experiment, run_homogeneity_with,
    run_power_experiment, run_size_experiment, CovariateKind, DatasetOutcome, ExperimentConfig, ExperimentKind,
    Gradient, MethodOutcome, MultinomialSource, NormalTheorySource, ReplicateDraw, ReplicateSource, DEFAULT_ALPHAS,
    METHOD_BETTA, METHOD_HOMOGENEITY, METHOD_REGRESSION,
};
pub use population::{
    inject_richness_gradient, injected_category_count, population_from_table, SampleSizeDistribution,
    SyntheticPopulation,
};
pub use report::{read_report_rows, ExperimentReport, ReportRow, REPORT_HEADER};
pub use resample::{multinomial_counts, resample_dataset, resample_table, resample_with_sizes};
pub use rng::{substream, TAG_BOOTSTRAP, TAG_DATASET, TAG_REPLICATE};
