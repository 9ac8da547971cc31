//! Richness estimators usable by the pipeline and the simulation harness.

use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BettaError, Result};
use crate::io::{chao1, FrequencyCountTable, RichnessEstimate};

/// Which estimator turns a frequency table into `(Ĉ, σ̂)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Chao1,
    /// The observed richness `c` with a zero standard error.
    Observed,
    /// A shell command reading the table on stdin and printing
    /// `estimate,std_error` on stdout.
    External(String),
}

impl Estimator {
    pub fn estimate(&self, table: &FrequencyCountTable) -> Result<RichnessEstimate> {
        match self {
            Estimator::Chao1 => Ok(chao1(table)),
            Estimator::Observed => Ok(RichnessEstimate {
                estimate: table.observed_richness() as f64,
                std_error: 0.0,
                method: "observed".into(),
            }),
            Estimator::External(cmd) => run_external(cmd, table),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Chao1 => f.write_str("chao1"),
            Estimator::Observed => f.write_str("observed"),
            Estimator::External(cmd) => write!(f, "cmd:{cmd}"),
        }
    }
}

impl FromStr for Estimator {
    type Err = BettaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chao1" => Ok(Estimator::Chao1),
            "observed" | "observed-richness" => Ok(Estimator::Observed),
            _ => match s.strip_prefix("cmd:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(Estimator::External(cmd.to_string())),
                _ => Err(BettaError::Config(format!(
                    "unknown estimator `{s}` (expected chao1, observed or cmd:<command>)"
                ))),
            },
        }
    }
}

/// Parse the external hook's reply: the first non-comment line must be
/// `estimate,std_error` with finite values and a nonnegative error.
pub fn parse_estimator_reply(stdout: &str, command: &str) -> Result<RichnessEstimate> {
    let line = stdout
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| BettaError::EstimatorProtocol(format!("`{command}` produced no output")))?;
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let bad = || BettaError::EstimatorProtocol(format!("`{command}` replied `{line}`, expected `estimate,std_error`"));
    if fields.len() != 2 {
        return Err(bad());
    }
    let estimate: f64 = fields[0].parse().map_err(|_| bad())?;
    let std_error: f64 = fields[1].parse().map_err(|_| bad())?;
    if !estimate.is_finite() || !std_error.is_finite() || std_error < 0.0 {
        return Err(bad());
    }
    Ok(RichnessEstimate { estimate, std_error, method: format!("cmd:{command}") })
}

fn run_external(command: &str, table: &FrequencyCountTable) -> Result<RichnessEstimate> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| BettaError::EstimatorFailed(format!("could not spawn `{command}`: {e}")))?;
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A command that exits without reading stdin closes the pipe early.
        if let Err(e) = stdin.write_all(table.to_text().as_bytes()) {
            if e.kind() != std::io::ErrorKind::BrokenPipe {
                return Err(e.into());
            }
        }
    }
    let output = child.wait_with_output()?;
    if !output.status.success() {
        return Err(BettaError::EstimatorFailed(format!(
            "`{command}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    parse_estimator_reply(&String::from_utf8_lossy(&output.stdout), command)
}
