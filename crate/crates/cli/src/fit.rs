//! `fit` and `fit-random`.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use betta::inference::{diagnostics_from, Diagnostics};
use betta::io::{EstimateColumns, EstimateTable};
use betta::{fit_betta, fit_betta_random, global_test, homogeneity_test, read_estimates, wald_tests, TestResult};
use clap::Args;
use log::warn;
use serde::Serialize;
use serde_json::json;

use crate::bundle::{to_json, Bundle, Input};
use crate::NotConverged;

pub const FIT_FILE: &str = "fit.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Estimate table with columns id,estimate,std_error and covariates.
    #[arg(long)]
    pub input: PathBuf,
    /// Covariate columns (comma separated); defaults to every extra column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitRandomArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Column holding the grouping factor.
    #[arg(long, default_value = "group")]
    pub group: String,
}

#[derive(Debug, Serialize)]
pub struct TermRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Serialize)]
pub struct TestSummary {
    pub statistic: f64,
    pub dof: Option<usize>,
    pub p_value: f64,
}

impl From<TestResult> for TestSummary {
    fn from(t: TestResult) -> Self {
        Self { statistic: t.statistic, dof: t.dof, p_value: t.p_value }
    }
}

/// Contents of `fit.json`. Field order is the key order in the file.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model: &'static str,
    pub n_observations: usize,
    pub n_dropped: usize,
    pub terms: Vec<TermRow>,
    pub sigma_u_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_g_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_levels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_to_fixed: Option<bool>,
    pub reml: f64,
    pub converged: bool,
    pub global_test: Option<TestSummary>,
    pub homogeneity_test: Option<TestSummary>,
}

fn terms(tests: Vec<TestResult>, beta: &[f64], se: &[f64]) -> Vec<TermRow> {
    tests
        .into_iter()
        .zip(beta.iter().zip(se))
        .map(|(t, (&b, &s))| TermRow {
            term: t.term.unwrap_or_default(),
            estimate: b,
            std_error: s,
            z: t.statistic,
            p_value: t.p_value,
        })
        .collect()
}

fn optional_test(result: betta::Result<TestResult>, what: &str) -> Result<Option<TestSummary>> {
    match result {
        Ok(t) => Ok(Some(t.into())),
        Err(betta::BettaError::NotApplicable(_) | betta::BettaError::DegreesOfFreedom { .. }) => {
            log::info!("{what} not reported: not applicable to this design");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn load(input: &Input, covariates: &Option<Vec<String>>, group: Option<&str>) -> Result<EstimateTable> {
    let columns = EstimateColumns { covariates: covariates.clone(), group: group.map(str::to_string) };
    let table = read_estimates(input.bytes.as_slice(), &columns)
        .with_context(|| format!("reading estimates from {}", input.path.display()))?;
    if table.dropped > 0 {
        warn!("dropped {} row(s) with missing or non-finite values", table.dropped);
    }
    Ok(table)
}

/// Shortest round-trip text, switching to exponent form outside `[1e-5, 1e16)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn coefficients_csv(terms: &[TermRow]) -> String {
    let mut s = String::from("term,estimate,std_error,z,p_value\n");
    for t in terms {
        let _ = writeln!(s, "{},{},{},{},{}", t.term, num(t.estimate), num(t.std_error), num(t.z), num(t.p_value));
    }
    s
}

fn diagnostics_csv(d: &Diagnostics) -> String {
    let mut s = String::from("id,estimate,lower,upper,fitted,std_residual,normal_quantile\n");
    for r in &d.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.id,
            num(r.estimate),
            num(r.lower),
            num(r.upper),
            num(r.fitted),
            num(r.std_residual),
            num(r.normal_quantile)
        );
    }
    s
}

pub fn summary_text(report: &FitReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", report.model);
    let _ = writeln!(s, "observations: {} (dropped {})", report.n_observations, report.n_dropped);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:>14} {:>12} {:>9} {:>10}", "term", "estimate", "std_error", "z", "p_value");
    for t in &report.terms {
        let _ = writeln!(
            s,
            "{:<24} {:>14.4} {:>12.4} {:>9.3} {:>10.4e}",
            t.term, t.estimate, t.std_error, t.z, t.p_value
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "sigma_u^2: {:.6}", report.sigma_u_sq);
    if let Some(g) = report.sigma_g_sq {
        let _ = writeln!(s, "sigma_g^2: {g:.6}");
    }
    let _ = writeln!(s, "restricted log-likelihood: {:.6}", report.reml);
    if let Some(t) = &report.global_test {
        let _ = writeln!(s, "global chi-square: {:.4} on {} df, p = {:.4e}", t.statistic, t.dof.unwrap_or(0), t.p_value);
    }
    if let Some(t) = &report.homogeneity_test {
        let _ = writeln!(s, "homogeneity Q: {:.4} on {} df, p = {:.4e}", t.statistic, t.dof.unwrap_or(0), t.p_value);
    }
    if report.reduced_to_fixed == Some(true) {
        let _ = writeln!(s, "note: single group level, fixed-effects model fitted");
    }
    if !report.converged {
        let _ = writeln!(s, "warning: variance search did not converge");
    }
    s
}

fn write_bundle(
    args: &FitArgs,
    subcommand: &str,
    report: &FitReport,
    diagnostics: &Diagnostics,
    input: &Input,
    extra_config: serde_json::Value,
) -> Result<()> {
    let mut bundle = Bundle::create(&args.out, subcommand)?;
    let json = to_json(report)?;
    bundle.write(FIT_FILE, &json)?;
    bundle.write(COEFFICIENTS_FILE, coefficients_csv(&report.terms))?;
    bundle.write(DIAGNOSTICS_FILE, diagnostics_csv(diagnostics))?;
    let summary = summary_text(report);
    bundle.write(SUMMARY_FILE, &summary)?;
    // the result file must parse back before the run counts as complete
    serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(bundle.path(FIT_FILE))?)
        .context("validating fit.json")?;
    let mut config = json!({ "input": args.input.display().to_string(), "covariates": args.covariates });
    if let (Some(c), Some(extra)) = (config.as_object_mut(), extra_config.as_object()) {
        c.extend(extra.clone());
    }
    bundle.finish(config, &[input], None)?;
    print!("{summary}");
    if !report.converged {
        return Err(NotConverged.into());
    }
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let input = Input::read(&args.input)?;
    let table = load(&input, &args.covariates, None)?;
    let fit = fit_betta(&table.dataset)?;
    let report = FitReport {
        model: "fixed",
        n_observations: fit.m(),
        n_dropped: table.dropped,
        terms: terms(wald_tests(&fit)?, &fit.beta_hat, &fit.std_errors_of_beta()),
        sigma_u_sq: fit.sigma_u_sq_hat,
        sigma_g_sq: None,
        group_levels: None,
        reduced_to_fixed: None,
        reml: fit.reml_value,
        converged: fit.converged,
        global_test: optional_test(global_test(&fit), "global test")?,
        homogeneity_test: optional_test(homogeneity_test(&fit), "homogeneity test")?,
    };
    let diagnostics = betta::residual_diagnostics(&fit);
    write_bundle(args, "fit", &report, &diagnostics, &input, json!({}))
}

pub fn cmd_fit_random(args: &FitRandomArgs) -> Result<()> {
    let input = Input::read(&args.fit.input)?;
    let table = load(&input, &args.fit.covariates, Some(&args.group))?;
    let grouped = table.grouped()?;
    let fit = fit_betta_random(&grouped)?;
    let ds = grouped.base();
    // a single level reduces to the fixed-effects model, including its Q test
    let homogeneity = if fit.reduced {
        optional_test(homogeneity_test(&fit_betta(ds)?), "homogeneity test")?
    } else {
        None
    };
    let report = FitReport {
        model: "random",
        n_observations: ds.m(),
        n_dropped: table.dropped,
        terms: terms(fit.wald_tests()?, &fit.beta_hat, &fit.std_errors_of_beta()),
        sigma_u_sq: fit.sigma_u_sq_hat,
        sigma_g_sq: Some(fit.sigma_g_sq_hat),
        group_levels: Some(fit.group_levels.clone()),
        reduced_to_fixed: Some(fit.reduced),
        reml: fit.reml_value,
        converged: fit.converged,
        global_test: optional_test(fit.global_test(), "global test")?,
        homogeneity_test: homogeneity,
    };
    let ids: Vec<String> = ds.observations().iter().map(|o| o.id.clone()).collect();
    let diagnostics = diagnostics_from(&ids, &ds.estimates(), &ds.effective_std_errors(), &fit.fitted);
    write_bundle(&args.fit, "fit-random", &report, &diagnostics, &input, json!({ "group": args.group }))
}
