//! Rejection-rate tables produced by the experiments.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::experiment::{DatasetOutcome, ExperimentKind};
use crate::error::{BettaError, Result};

pub const REPORT_HEADER: &str = "method,alpha,rate,mc_se,n_datasets,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub alpha: f64,
    pub rate: f64,
    /// Monte Carlo standard error `√(rate (1 − rate) / n)`.
    pub mc_se: f64,
    pub n_datasets: usize,
    pub seed: u64,
}

impl ReportRow {
    pub fn new(method: &str, alpha: f64, rejections: usize, n: usize, seed: u64) -> Self {
        let rate = if n == 0 { f64::NAN } else { rejections as f64 / n as f64 };
        Self {
            method: method.to_string(),
            alpha,
            rate,
            mc_se: (rate * (1.0 - rate) / n as f64).sqrt(),
            n_datasets: n,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    /// Description of how replicates were generated.
    pub source: String,
    /// Null, gradient or split description.
    pub design: String,
    /// Echo of the configuration that determines the results.
    pub config: String,
    pub seed: u64,
    pub n_datasets: usize,
    pub replicate_failures: usize,
    /// Datasets on which each method's fit failed (counted as not rejected).
    pub fit_failures: BTreeMap<String, usize>,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub outcomes: Vec<DatasetOutcome>,
}

impl ExperimentReport {
    pub fn rate(&self, method: &str, alpha: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.alpha == alpha)
    }

    /// `#` comment lines echoing the run, then the CSV table.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# kind={}", self.kind)?;
        writeln!(out, "# source={}", self.source)?;
        writeln!(out, "# design={}", self.design)?;
        writeln!(out, "# config={}", self.config)?;
        writeln!(out, "# replicate_failures={}", self.replicate_failures)?;
        let fits: Vec<String> = self.fit_failures.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(out, "# fit_failures={}", fits.join(";"))?;
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.method, r.alpha, r.rate, r.mc_se, r.n_datasets, r.seed)?;
        }
        Ok(())
    }

    pub fn to_delimited(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is valid UTF-8")
    }

    /// Per-dataset statistics and p-values as `dataset,method,statistic,p_value`.
    pub fn write_outcomes<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dataset,method,statistic,p_value,replicate_failures")?;
        for o in &self.outcomes {
            for m in &o.methods {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    o.dataset + 1,
                    m.method,
                    m.statistic,
                    m.p_value,
                    o.replicate_failures
                )?;
            }
        }
        Ok(())
    }
}

/// Parse the table rows of a written report, skipping `#` lines.
pub fn read_report_rows<R: Read>(source: R) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != REPORT_HEADER {
                return Err(BettaError::Parse { line: i + 1, message: format!("expected header `{REPORT_HEADER}`") });
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| BettaError::Parse { line: i + 1, message: format!("bad {what}") };
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        rows.push(ReportRow {
            method: f[0].to_string(),
            alpha: f[1].parse().map_err(|_| bad("alpha"))?,
            rate: f[2].parse().map_err(|_| bad("rate"))?,
            mc_se: f[3].parse().map_err(|_| bad("mc_se"))?,
            n_datasets: f[4].parse().map_err(|_| bad("n_datasets"))?,
            seed: f[5].parse().map_err(|_| bad("seed"))?,
        });
    }
    if !seen_header {
        return Err(BettaError::EmptyTable);
    }
    Ok(rows)
}
