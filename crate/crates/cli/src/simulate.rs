//! `simulate size|power|homogeneity`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use betta::estimator::Estimator;
use betta::read_frequency_table;
use betta::sim::{
    population_from_table, read_report_rows, run_homogeneity_experiment, run_power_experiment, run_size_experiment,
    CovariateKind, ExperimentConfig, Gradient, SampleSizeDistribution, DEFAULT_ALPHAS,
};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::bundle::{Bundle, Input};

pub const REPORT_FILE: &str = "report.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Size,
    Power,
    Homogeneity,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment to run.
    #[arg(value_enum)]
    pub kind: SimKind,
    /// Frequency count table defining the source population.
    #[arg(long)]
    pub input: PathBuf,
    /// Run seed; every random draw derives from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Replicates (richness estimates) per dataset.
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Number of simulated datasets.
    #[arg(long, default_value_t = 1000)]
    pub datasets: usize,
    /// Significance levels (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS)]
    pub alphas: Vec<f64>,
    /// Percent extra rare categories: the largest value of a continuous
    /// gradient, the category-B increase of a contrast, or the injected half
    /// of a homogeneity run.
    #[arg(long)]
    pub percent: Option<f64>,
    /// Richness estimator: chao1, observed, or cmd:<shell command>.
    #[arg(long, default_value = "chao1")]
    pub estimator: Estimator,
    /// Sample sizes to draw from uniformly; defaults to the input's read count.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u64>>,
    /// Covariate grid for the continuous design (one value per replicate).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Use a two-category covariate (first half A, second half B).
    #[arg(long)]
    pub categorical: bool,
    /// Covariate columns; only meaningful for fitted tables, rejected here
    /// for homogeneity runs.
    #[arg(long, value_delimiter = ',', hide = true)]
    pub covariates: Option<Vec<String>>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write per-dataset statistics and p-values.
    #[arg(long)]
    pub dump: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn build_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    if args.kind == SimKind::Homogeneity
        && (args.covariates.is_some() || args.grid.is_some() || args.categorical)
    {
        bail!("the homogeneity experiment fits no covariates; remove --covariates/--grid/--categorical");
    }
    if args.covariates.is_some() {
        bail!("--covariates does not apply to simulations; use --grid or --categorical");
    }
    let mut config = if args.categorical {
        if args.grid.is_some() {
            bail!("--grid and --categorical are mutually exclusive");
        }
        ExperimentConfig::two_category(args.replicates, args.datasets, args.seed, args.estimator.clone())
    } else {
        ExperimentConfig::continuous(args.replicates, args.datasets, args.seed, args.estimator.clone())
    };
    if let Some(grid) = &args.grid {
        config.grid = grid.clone();
    }
    config.alpha_levels = args.alphas.clone();
    config.workers = args.workers;
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = build_config(args)?;
    let input = Input::read(&args.input)?;
    let table = read_frequency_table(input.bytes.as_slice())
        .with_context(|| format!("reading frequency table {}", input.path.display()))?;
    let pop = population_from_table(&table, input.stem());
    let sizes = match &args.sizes {
        Some(s) => SampleSizeDistribution::new(s.clone())?,
        None => SampleSizeDistribution::fixed(table.total_reads())?,
    };

    let report = match args.kind {
        SimKind::Size => {
            if args.percent.is_some() {
                bail!("--percent applies to power and homogeneity experiments");
            }
            run_size_experiment(&pop, &sizes, &config)?
        }
        SimKind::Power => {
            let Some(percent) = args.percent else { bail!("simulate power requires --percent") };
            let gradient = match config.covariate_kind {
                CovariateKind::Continuous => Gradient::proportional_to_grid(percent, &config.grid),
                CovariateKind::TwoCategory => Gradient::Contrast(percent),
            };
            run_power_experiment(&pop, &sizes, &config, &gradient)?
        }
        SimKind::Homogeneity => run_homogeneity_experiment(&pop, &sizes, &config, args.percent.unwrap_or(0.0))?,
    };

    let mut bundle = Bundle::create(&args.out, "simulate")?;
    let text = report.to_delimited();
    bundle.write(REPORT_FILE, &text)?;
    let rows = read_report_rows(std::fs::read(bundle.path(REPORT_FILE))?.as_slice()).context("validating report")?;
    if rows != report.rows {
        bail!("report did not read back identically");
    }
    if args.dump {
        let mut buf = Vec::new();
        report.write_outcomes(&mut buf)?;
        bundle.write(OUTCOMES_FILE, buf)?;
    }
    let resolved = json!({
        "kind": format!("{:?}", args.kind).to_lowercase(),
        "input": args.input.display().to_string(),
        "replicates_per_dataset": config.replicates_per_dataset,
        "n_datasets": config.n_datasets,
        "covariate_kind": config.covariate_kind,
        "grid": config.grid,
        "alpha_levels": config.alpha_levels,
        "percent": args.percent,
        "estimator": config.estimator.to_string(),
        "sizes": sizes.sizes(),
        "workers": args.workers,
        "dump": args.dump,
    });
    bundle.finish(resolved, &[&input], Some(config.seed))?;
    print!("{text}");
    if report.replicate_failures > 0 {
        log::warn!("{} replicate(s) regenerated after estimator failures", report.replicate_failures);
    }
    Ok(())
}
