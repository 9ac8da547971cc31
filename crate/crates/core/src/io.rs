//! Frequency-count and richness-estimate tables, and the Chao1 baseline.
//!
//! Both formats are UTF-8 delimited text (comma, or tab when the first data
//! line contains one) with `#` comment lines. Missing values are `NA` or empty.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{BettaError, Result};
use crate::mixed::GroupedDataset;
use crate::model::{Dataset, RichnessObservation};

/// Abundance `j` → number of taxa observed exactly `j` times.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrequencyCountTable {
    entries: Vec<(u64, u64)>,
}

impl FrequencyCountTable {
    /// Validated table from `(abundance, count)` pairs in any order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (j, f) in pairs {
            if j == 0 || f == 0 {
                return Err(BettaError::InvalidInput(format!("abundance and count must be positive, got ({j}, {f})")));
            }
            if map.insert(j, f).is_some() {
                return Err(BettaError::InvalidInput(format!("duplicate abundance {j}")));
            }
        }
        if map.is_empty() {
            return Err(BettaError::EmptyTable);
        }
        Ok(Self { entries: map.into_iter().collect() })
    }

    /// Aggregate per-taxon counts; zero counts are ignored.
    pub fn from_taxon_counts(counts: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut map: BTreeMap<u64, u64> = BTreeMap::new();
        for c in counts.into_iter().filter(|&c| c > 0) {
            *map.entry(c).or_default() += 1;
        }
        if map.is_empty() {
            return Err(BettaError::EmptyTable);
        }
        Ok(Self { entries: map.into_iter().collect() })
    }

    /// `(abundance, count)` pairs in strictly increasing abundance.
    pub fn entries(&self) -> &[(u64, u64)] {
        &self.entries
    }

    /// Observed richness `c = Σ f_j`.
    pub fn observed_richness(&self) -> u64 {
        self.entries.iter().map(|&(_, f)| f).sum()
    }

    /// Total reads `n = Σ j · f_j`.
    pub fn total_reads(&self) -> u64 {
        self.entries.iter().map(|&(j, f)| j * f).sum()
    }

    pub fn frequency(&self, abundance: u64) -> u64 {
        self.entries
            .binary_search_by_key(&abundance, |&(j, _)| j)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn singletons(&self) -> u64 {
        self.frequency(1)
    }

    pub fn doubletons(&self) -> u64 {
        self.frequency(2)
    }

    /// `f₁ / f₂`, undefined without doubletons.
    pub fn singleton_doubleton_ratio(&self) -> Option<f64> {
        let f2 = self.doubletons();
        (f2 > 0).then(|| self.singletons() as f64 / f2 as f64)
    }

    /// Per-taxon abundances, one entry per observed taxon, ascending.
    pub fn taxon_abundances(&self) -> Vec<u64> {
        self.entries
            .iter()
            .flat_map(|&(j, f)| std::iter::repeat_n(j, f as usize))
            .collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for &(j, f) in &self.entries {
            writeln!(out, "{j},{f}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii")
    }
}

/// A richness estimate produced from one frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub method: String,
}

fn detect_delimiter(text: &str) -> u8 {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn records(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(detect_delimiter(text))
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| BettaError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn read_all<R: Read>(mut source: R) -> Result<String> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    Ok(text)
}

/// Parse an `abundance,count` table. A non-numeric first line is a header.
pub fn read_frequency_table<R: Read>(source: R) -> Result<FrequencyCountTable> {
    let text = read_all(source)?;
    let mut map = BTreeMap::new();
    for (k, (line, fields)) in records(&text)?.into_iter().enumerate() {
        if k == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 2 {
            return Err(BettaError::Parse { line, message: format!("expected 2 fields, found {}", fields.len()) });
        }
        let parse = |s: &str, what: &str| -> Result<u64> {
            let v: u64 = s
                .parse()
                .map_err(|_| BettaError::Parse { line, message: format!("{what} `{s}` is not a positive integer") })?;
            if v == 0 {
                return Err(BettaError::Parse { line, message: format!("{what} must be positive") });
            }
            Ok(v)
        };
        let j = parse(&fields[0], "abundance")?;
        let f = parse(&fields[1], "count")?;
        if map.insert(j, f).is_some() {
            return Err(BettaError::Parse { line, message: format!("duplicate abundance {j}") });
        }
    }
    if map.is_empty() {
        return Err(BettaError::EmptyTable);
    }
    Ok(FrequencyCountTable { entries: map.into_iter().collect() })
}

/// Chao1 lower-bound richness estimate.
///
/// `c + f₁²/(2f₂)` when doubletons are present, otherwise the bias-corrected
/// `c + f₁(f₁−1)/2`.
pub fn chao1(table: &FrequencyCountTable) -> RichnessEstimate {
    let c = table.observed_richness() as f64;
    let f1 = table.singletons() as f64;
    let f2 = table.doubletons() as f64;
    let (estimate, variance) = if f2 > 0.0 {
        let r = f1 / f2;
        (c + f1 * f1 / (2.0 * f2), f2 * (r.powi(4) / 4.0 + r.powi(3) + r * r / 2.0))
    } else {
        let est = c + f1 * (f1 - 1.0) / 2.0;
        let var = f1 * (f1 - 1.0) / 2.0 + f1 * (2.0 * f1 - 1.0).powi(2) / 4.0 - f1.powi(4) / (4.0 * est);
        (est, var.max(0.0))
    };
    RichnessEstimate { estimate, std_error: variance.sqrt(), method: "chao1".into() }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("NA")
}

/// Column selection for [`read_estimates`].
#[derive(Debug, Clone, Default)]
pub struct EstimateColumns {
    /// Covariate columns; `None` means every column other than the mandatory
    /// ones and the group column.
    pub covariates: Option<Vec<String>>,
    /// Group column. Defaults to a column literally named `group` when present.
    pub group: Option<String>,
}

/// Result of reading an estimate table.
#[derive(Debug, Clone)]
pub struct EstimateTable {
    pub dataset: Dataset,
    /// Group label per retained row, when a group column was used.
    pub groups: Option<Vec<String>>,
    /// Rows dropped for missing or non-finite values.
    pub dropped: usize,
}

impl EstimateTable {
    pub fn grouped(&self) -> Result<GroupedDataset> {
        let groups = self
            .groups
            .clone()
            .ok_or_else(|| BettaError::InvalidInput("estimate table has no group column".into()))?;
        GroupedDataset::new(self.dataset.clone(), groups)
    }
}

enum Encoding {
    Numeric,
    /// Sorted levels; the first is the reference.
    Categorical(Vec<String>),
}

fn field(fields: &[String], i: usize) -> &str {
    fields.get(i).map(String::as_str).unwrap_or("")
}

/// Read an `id,estimate,std_error,<covariates...>[,group]` table.
///
/// Rows with a missing or non-finite estimate, standard error, selected
/// covariate or group are dropped and counted. Non-numeric covariates are
/// expanded to 0/1 indicators against the first level in sorted order, named
/// `column[level]`.
pub fn read_estimates<R: Read>(source: R, columns: &EstimateColumns) -> Result<EstimateTable> {
    let text = read_all(source)?;
    let recs = records(&text)?;
    let Some(((_, header), body)) = recs.split_first() else {
        return Err(BettaError::InvalidInput("estimate table is empty".into()));
    };
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| BettaError::MissingColumn("id".into()))?;
    let est_col = col("estimate").ok_or_else(|| BettaError::MissingColumn("estimate".into()))?;
    let se_col = col("std_error").ok_or_else(|| BettaError::MissingColumn("std_error".into()))?;
    let group_name = columns.group.clone().or_else(|| col("group").map(|_| "group".to_string()));
    let group_col = match &group_name {
        Some(g) => Some(col(g).ok_or_else(|| BettaError::MissingColumn(g.clone()))?),
        None => None,
    };
    let cov_names: Vec<String> = match &columns.covariates {
        Some(list) => list.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_col, est_col, se_col].contains(i) && Some(*i) != group_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names
        .iter()
        .map(|n| col(n).ok_or_else(|| BettaError::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>>>()?;

    let parse_num = |s: &str, line: usize, what: &str| -> Result<f64> {
        if is_missing(s) {
            return Ok(f64::NAN);
        }
        s.parse::<f64>().map_err(|_| BettaError::Parse { line, message: format!("{what} `{s}` is not a number") })
    };

    // Pass 1: usable rows and covariate encodings.
    let mut kept = Vec::new();
    let mut dropped = 0;
    for (line, fields) in body {
        if fields.len() > header.len() {
            return Err(BettaError::Parse {
                line: *line,
                message: format!("{} fields but header has {}", fields.len(), header.len()),
            });
        }
        let est = parse_num(field(fields, est_col), *line, "estimate")?;
        let se = parse_num(field(fields, se_col), *line, "std_error")?;
        if se < 0.0 {
            return Err(BettaError::Parse { line: *line, message: format!("negative std_error {se}") });
        }
        let cov_missing = cov_cols.iter().any(|&c| is_missing(field(fields, c)));
        let group_missing = group_col.is_some_and(|g| is_missing(field(fields, g)));
        if !est.is_finite() || !se.is_finite() || cov_missing || group_missing {
            dropped += 1;
            continue;
        }
        kept.push((*line, fields));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing or non-finite values");
    }

    let encodings: Vec<Encoding> = cov_cols
        .iter()
        .map(|&c| {
            if kept.iter().all(|(_, f)| field(f, c).parse::<f64>().is_ok()) {
                Encoding::Numeric
            } else {
                let mut levels: Vec<String> = kept.iter().map(|(_, f)| field(f, c).to_string()).collect();
                levels.sort();
                levels.dedup();
                Encoding::Categorical(levels)
            }
        })
        .collect();
    let mut term_names = Vec::new();
    for (name, enc) in cov_names.iter().zip(&encodings) {
        match enc {
            Encoding::Numeric => term_names.push(name.clone()),
            Encoding::Categorical(levels) => {
                term_names.extend(levels.iter().skip(1).map(|l| format!("{name}[{l}]")));
            }
        }
    }

    let mut observations = Vec::with_capacity(kept.len());
    let mut groups = group_col.map(|_| Vec::with_capacity(kept.len()));
    for (line, fields) in &kept {
        let mut covariates = Vec::with_capacity(term_names.len());
        for (&c, enc) in cov_cols.iter().zip(&encodings) {
            let raw = field(fields, c);
            match enc {
                Encoding::Numeric => {
                    let v = parse_num(raw, *line, "covariate")?;
                    if !v.is_finite() {
                        return Err(BettaError::Parse { line: *line, message: format!("non-finite covariate `{raw}`") });
                    }
                    covariates.push(v);
                }
                Encoding::Categorical(levels) => {
                    covariates.extend(levels.iter().skip(1).map(|l| if l == raw { 1.0 } else { 0.0 }));
                }
            }
        }
        let est = parse_num(field(fields, est_col), *line, "estimate")?;
        let se = parse_num(field(fields, se_col), *line, "std_error")?;
        let mut obs = RichnessObservation::new(field(fields, id_col), est, se, covariates);
        if let (Some(g), Some(groups)) = (group_col, groups.as_mut()) {
            let label = field(fields, g).to_string();
            obs.group = Some(label.clone());
            groups.push(label);
        }
        observations.push(obs);
    }
    if observations.len() < 2 {
        return Err(BettaError::InvalidInput(format!(
            "fewer than 2 usable rows ({} usable, {dropped} dropped)",
            observations.len()
        )));
    }
    let dataset = Dataset::new(observations, term_names)?;
    Ok(EstimateTable { dataset, groups, dropped })
}

/// Write a dataset as an estimate table; numbers use shortest round-trip
/// formatting so reading back is exact.
pub fn write_estimates<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let has_group = dataset.observations().iter().any(|o| o.group.is_some());
    let mut header = vec!["id".to_string(), "estimate".into(), "std_error".into()];
    header.extend(dataset.covariate_names().iter().cloned());
    if has_group {
        header.push("group".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for o in dataset.observations() {
        let mut row = vec![o.id.clone(), o.estimate.to_string(), o.std_error.to_string()];
        row.extend(o.covariates.iter().map(f64::to_string));
        if has_group {
            row.push(o.group.clone().unwrap_or_else(|| "NA".into()));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
