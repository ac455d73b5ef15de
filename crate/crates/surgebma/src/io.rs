//! Readers and writers for every on-disk format of the pipeline.
//!
//! CSV outputs start with a `# config_hash=<hex>` comment line; all CSV
//! readers skip `#` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use surgebma_core::covariates::AnnualSeries;
use surgebma_core::model::{ModelStructure, Param, ParameterVector};
use surgebma_core::preprocess::{hour_number, ExceedanceSet, HourlySeries};
use surgebma_core::priors::{PriorSet, PriorSpec};
use surgebma_core::sampler::{Diagnostics, PosteriorEnsemble};

use crate::error::{Error, Result};

pub const HOURLY_HEADER: [&str; 2] = ["timestamp", "level_m"];

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    write_file(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes())
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), line, message: message.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(path, line, e.to_string())
}

fn check_header(path: &Path, reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        let line = header.position().map_or(1, |p| p.line());
        return Err(parse_error(path, line, format!("expected header `{}`, found `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn csv_header_line(config_hash: Option<&str>, header: &[&str]) -> String {
    let mut out = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(out, "# config_hash={h}");
    }
    out.push_str(&header.join(","));
    out.push('\n');
    out
}

/// ISO-8601 timestamp to whole hours since the Unix epoch. Accepts an
/// optional UTC offset, a `T` or space separator, and optional seconds.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Hourly tide-gauge CSV with header `timestamp,level_m`; an empty level
/// marks a missing hour.
pub fn read_hourly_csv(path: &Path) -> Result<HourlySeries> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(surgebma_core::Error::EmptyInput.into());
    }
    let mut reader = csv_reader(&text);
    check_header(path, &mut reader, &HOURLY_HEADER)?;
    let mut timestamps = Vec::new();
    let mut levels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let dt = parse_timestamp(&record[0])
            .ok_or_else(|| parse_error(path, line, format!("invalid timestamp `{}`", &record[0])))?;
        if dt.and_utc().timestamp().rem_euclid(3600) != 0 {
            return Err(parse_error(path, line, "timestamp not on a whole hour"));
        }
        let hour = hour_number(dt);
        if timestamps.last().is_some_and(|prev| *prev >= hour) {
            return Err(parse_error(path, line, "timestamps must be strictly increasing"));
        }
        let level = match &record[1] {
            "" => None,
            v => {
                let x: f64 = v.parse().map_err(|_| parse_error(path, line, format!("invalid level `{v}`")))?;
                if !x.is_finite() {
                    return Err(parse_error(path, line, format!("non-finite level `{v}`")));
                }
                Some(x)
            }
        };
        timestamps.push(hour);
        levels.push(level);
    }
    if timestamps.is_empty() {
        return Err(surgebma_core::Error::EmptyInput.into());
    }
    Ok(HourlySeries::new(timestamps, levels)?)
}

pub fn write_hourly_csv(path: &Path, series: &HourlySeries) -> Result<()> {
    let mut out = csv_header_line(None, &HOURLY_HEADER);
    for (t, l) in series.timestamps().iter().zip(series.levels()) {
        let dt = DateTime::from_timestamp(t * 3600, 0).ok_or_else(|| Error::input(path, "timestamp out of range"))?;
        let _ = write!(out, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ"));
        match l {
            Some(v) => {
                let _ = writeln!(out, ",{v:.4}");
            }
            None => out.push_str(",\n"),
        }
    }
    write_file(path, &out)
}

/// Exceedance JSON: the set itself plus an optional provenance hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
    #[serde(flatten)]
    pub set: ExceedanceSet,
}

pub fn read_exceedances(path: &Path) -> Result<ExceedanceFile> {
    let file: ExceedanceFile = read_json(path)?;
    file.set.validate(1).map_err(|e| Error::input(path, e.to_string()))?;
    Ok(file)
}

/// Annual (`year,value`) or monthly (`year,month,value`) covariate table.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateTable {
    Annual(AnnualSeries),
    Monthly(Vec<(i32, u32, f64)>),
}

pub fn read_covariate_csv(path: &Path) -> Result<CovariateTable> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(surgebma_core::Error::EmptyInput.into());
    }
    let mut reader = csv_reader(&text);
    let header: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let monthly = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["year", "value"] => false,
        ["year", "month", "value"] => true,
        other => {
            return Err(parse_error(path, 1, format!("expected header `year,value` or `year,month,value`, found `{}`", other.join(","))))
        }
    };
    let mut annual = Vec::new();
    let mut months = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| &record[i];
        let year: i32 = field(0).parse().map_err(|_| parse_error(path, line, format!("invalid year `{}`", field(0))))?;
        let vi = if monthly { 2 } else { 1 };
        let value: f64 = field(vi).parse().map_err(|_| parse_error(path, line, format!("invalid value `{}`", field(vi))))?;
        if !value.is_finite() {
            return Err(parse_error(path, line, "non-finite value"));
        }
        if monthly {
            let month: u32 = field(1)
                .parse()
                .ok()
                .filter(|m| (1..=12).contains(m))
                .ok_or_else(|| parse_error(path, line, format!("invalid month `{}`", field(1))))?;
            months.push((year, month, value));
        } else {
            annual.push((year, value));
        }
    }
    if annual.is_empty() && months.is_empty() {
        return Err(surgebma_core::Error::EmptyInput.into());
    }
    Ok(if monthly { CovariateTable::Monthly(months) } else { CovariateTable::Annual(annual) })
}

pub fn write_annual_csv(path: &Path, rows: &[(i32, f64)]) -> Result<()> {
    let mut out = csv_header_line(None, &["year", "value"]);
    for (y, v) in rows {
        let _ = writeln!(out, "{y},{v}");
    }
    write_file(path, &out)
}

pub fn write_monthly_csv(path: &Path, rows: &[(i32, u32, f64)]) -> Result<()> {
    let mut out = csv_header_line(None, &["year", "month", "value"]);
    for (y, m, v) in rows {
        let _ = writeln!(out, "{y},{m},{v}");
    }
    write_file(path, &out)
}

/// Per-station maximum-likelihood vectors, one row per (station, structure).
#[derive(Debug, Clone, PartialEq)]
pub struct MleRow {
    pub station: String,
    pub structure: ModelStructure,
    pub theta: ParameterVector,
}

const MLE_HEADER: [&str; 8] = ["station", "structure", "lambda0", "lambda1", "sigma0", "sigma1", "xi0", "xi1"];

pub fn write_mle_csv(path: &Path, config_hash: Option<&str>, rows: &[MleRow]) -> Result<()> {
    let mut out = csv_header_line(config_hash, &MLE_HEADER);
    for r in rows {
        let _ = write!(out, "{},{}", r.station, r.structure);
        for v in r.theta.0 {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_mle_csv(path: &Path) -> Result<Vec<MleRow>> {
    let text = read_to_string(path)?;
    let mut reader = csv_reader(&text);
    check_header(path, &mut reader, &MLE_HEADER)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let structure: ModelStructure = record[1].parse().map_err(|e: surgebma_core::Error| parse_error(path, line, e.to_string()))?;
        let mut theta = [0.0; 6];
        for (i, slot) in theta.iter_mut().enumerate() {
            *slot = record[2 + i]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("invalid {} `{}`", MLE_HEADER[2 + i], &record[2 + i])))?;
        }
        rows.push(MleRow { station: record[0].to_string(), structure, theta: ParameterVector(theta) });
    }
    Ok(rows)
}

/// Priors JSON body: structure id → parameter → `{family, p1, p2}`.
pub type PriorTable = BTreeMap<ModelStructure, BTreeMap<Param, PriorSpec>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsFile {
    pub config_hash: String,
    pub priors: PriorTable,
}

impl PriorsFile {
    pub fn prior_set(&self, structure: ModelStructure) -> Option<PriorSet> {
        self.priors.get(&structure).map(|params| PriorSet { structure, params: params.clone() })
    }
}

/// Ensemble CSV: header = active parameter names, one row per draw.
pub fn write_ensemble_csv(path: &Path, config_hash: &str, ensemble: &PosteriorEnsemble) -> Result<()> {
    let params = ensemble.structure.level().active_params();
    let names: Vec<&str> = params.iter().map(|p| p.name()).collect();
    let mut out = csv_header_line(Some(config_hash), &names);
    for d in &ensemble.draws {
        let row: Vec<String> = params.iter().map(|p| d.get(*p).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_ensemble_csv(path: &Path, structure: ModelStructure) -> Result<Vec<ParameterVector>> {
    let text = read_to_string(path)?;
    let mut reader = csv_reader(&text);
    let params = structure.level().active_params();
    let names: Vec<&str> = params.iter().map(|p| p.name()).collect();
    check_header(path, &mut reader, &names)?;
    let mut draws = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut theta = ParameterVector::default();
        for (i, p) in params.iter().enumerate() {
            let v: f64 = record[i].parse().map_err(|_| parse_error(path, line, format!("invalid value `{}`", &record[i])))?;
            theta.set(*p, v);
        }
        draws.push(theta);
    }
    Ok(draws)
}

/// Sidecar of an ensemble CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub config_hash: String,
    pub structure: ModelStructure,
    pub seed: u64,
    pub structure_seed: u64,
    pub n_iterations: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub thinned_size: usize,
    pub initial_point: BTreeMap<Param, f64>,
    pub diagnostics: Diagnostics,
    /// Set when the convergence gate failed and `--force` pooled anyway.
    pub warning: Option<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub structure: ModelStructure,
    pub log_evidence: f64,
    pub log_evidence_se: f64,
    pub iterations_used: usize,
    pub relative_change_at_stop: f64,
    pub converged: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceFile {
    pub config_hash: String,
    pub seed: u64,
    pub structures: Vec<EvidenceRow>,
    pub config: serde_json::Value,
}

/// Quantile table of one source (BMA mixture or a single structure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub source: String,
    /// `quantiles[i][j]`: period `i`, level `j`.
    pub quantiles: Vec<Vec<f64>>,
    pub flagged: Vec<usize>,
    pub clamped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFile {
    pub config_hash: String,
    pub seed: u64,
    pub year: i32,
    pub mixture_size: usize,
    pub periods: Vec<f64>,
    pub levels: Vec<f64>,
    pub bma: QuantileTable,
    pub structures: Vec<QuantileTable>,
    pub config: serde_json::Value,
}

/// Column label of a quantile level, e.g. `0.025` → `2.5%`.
pub fn level_label(level: f64) -> String {
    format!("{}%", (level * 1000.0).round() / 10.0)
}

/// Return period rows, quantile columns, three decimals.
pub fn write_quantile_table_csv(path: &Path, config_hash: &str, periods: &[f64], levels: &[f64], table: &[Vec<f64>]) -> Result<()> {
    let labels: Vec<String> = levels.iter().map(|l| level_label(*l)).collect();
    let mut header = vec!["Return period (years)"];
    header.extend(labels.iter().map(String::as_str));
    let mut out = csv_header_line(Some(config_hash), &header);
    for (t, row) in periods.iter().zip(table) {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v:.3}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Rows of `label,value...` with a fixed header.
pub fn write_rows_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = csv_header_line(Some(config_hash), header);
    for (label, values) in rows {
        out.push_str(label);
        for v in values {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Reads a `# config_hash=` CSV back as `(label, values)` rows.
pub fn read_rows_csv(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let text = read_to_string(path)?;
    let mut reader = csv_reader(&text);
    let header: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| parse_error(path, line, format!("invalid number `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((record[0].to_string(), values));
    }
    Ok((header, rows))
}
