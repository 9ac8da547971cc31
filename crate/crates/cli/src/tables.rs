//! `bootstrap-se` and `estimate`, the two frequency-table commands.

use std::path::PathBuf;

use anyhow::{Context, Result};
use betta::estimator::Estimator;
use betta::sim::parametric_bootstrap_se;
use betta::{read_frequency_table, FrequencyCountTable};
use clap::Args;
use serde_json::json;

use crate::bundle::{to_json, Bundle, Input};

pub const BOOTSTRAP_FILE: &str = "bootstrap.json";
pub const ESTIMATE_FILE: &str = "estimate.csv";

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Frequency count table.
    #[arg(long)]
    pub input: PathBuf,
    /// Richness estimator: chao1, observed, or cmd:<shell command>.
    #[arg(long, default_value = "chao1")]
    pub estimator: Estimator,
    /// Number of bootstrap resamples (at least 50).
    #[arg(long, default_value_t = 200)]
    pub resamples: usize,
    /// Resampling seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Frequency count table.
    #[arg(long)]
    pub input: PathBuf,
    /// Richness estimator: chao1, observed, or cmd:<shell command>.
    #[arg(long, default_value = "chao1")]
    pub estimator: Estimator,
    /// Identifier for the emitted row; defaults to the input file name.
    #[arg(long)]
    pub id: Option<String>,
    /// Also write the row and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_table(input: &Input) -> Result<FrequencyCountTable> {
    read_frequency_table(input.bytes.as_slice())
        .with_context(|| format!("reading frequency table {}", input.path.display()))
}

pub fn cmd_bootstrap_se(args: &BootstrapArgs) -> Result<()> {
    let input = Input::read(&args.input)?;
    let table = read_table(&input)?;
    let summary = parametric_bootstrap_se(&table, &args.estimator, args.resamples, args.seed)?;
    let mut bundle = Bundle::create(&args.out, "bootstrap-se")?;
    let text = to_json(&summary)?;
    bundle.write(BOOTSTRAP_FILE, &text)?;
    serde_json::from_str::<betta::sim::BootstrapSummary>(&std::fs::read_to_string(bundle.path(BOOTSTRAP_FILE))?)
        .context("validating bootstrap.json")?;
    bundle.finish(
        json!({
            "input": args.input.display().to_string(),
            "estimator": args.estimator.to_string(),
            "resamples": args.resamples,
        }),
        &[&input],
        Some(args.seed),
    )?;
    println!("estimate: {}", summary.original_estimate);
    println!("reported std_error: {}", summary.original_std_error);
    println!("bootstrap sd: {} ({} resamples, {} failed)", summary.bootstrap_sd, summary.resamples, summary.failures);
    match summary.ratio {
        Some(r) => println!("sd / std_error: {r}"),
        None => println!("sd / std_error: undefined (zero std_error)"),
    }
    println!("std_error understated: {}", summary.understated);
    Ok(())
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let input = Input::read(&args.input)?;
    let table = read_table(&input)?;
    let est = args.estimator.estimate(&table)?;
    let id = args.id.clone().unwrap_or_else(|| input.stem());
    let row = format!("{id},{},{}", est.estimate, est.std_error);

    let ratio = table.singleton_doubleton_ratio().map_or("undefined".to_string(), |r| format!("{r:.1}"));
    eprintln!("c = {}", table.observed_richness());
    eprintln!("n = {}", table.total_reads());
    eprintln!("f1 = {}", table.singletons());
    eprintln!("f2 = {}", table.doubletons());
    eprintln!("f1/f2 = {ratio}");
    println!("{row}");

    if let Some(out) = &args.out {
        let mut bundle = Bundle::create(out, "estimate")?;
        bundle.write(ESTIMATE_FILE, format!("id,estimate,std_error\n{row}\n"))?;
        bundle.finish(
            json!({
                "input": args.input.display().to_string(),
                "estimator": args.estimator.to_string(),
                "id": id,
            }),
            &[&input],
            None,
        )?;
    }
    Ok(())
}
