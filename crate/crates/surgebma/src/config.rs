//! TOML run configuration. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surgebma_core::covariates::{CovariateKind, CALIBRATION_END, CALIBRATION_START, PROJECTION_YEAR};
use surgebma_core::hazard::{DEFAULT_MIXTURE_SIZE, QUANTILE_LEVELS, RETURN_PERIODS};
use surgebma_core::model::ModelStructure;
use surgebma_core::preprocess::{
    DEFAULT_MIN_VALID_HOURS, DEFAULT_SEPARATION_DAYS, DEFAULT_THRESHOLD_QUANTILE, DEFAULT_WINDOW_DAYS,
};
use surgebma_core::sampler::{ChainConfig, ADAPTATION_DECAY, PSRF_GATE, TARGET_ACCEPTANCE};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 10k iterations × 4 chains, 1k thinned draws.
    #[default]
    Desk,
    /// 100k iterations × 10 chains, 10k thinned draws.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub profile: Profile,
    /// Structure ids; empty means all 13.
    pub structures: Vec<String>,
    /// Worker threads; unset uses every core.
    pub workers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("out"), seed: 1, profile: Profile::Desk, structures: Vec::new(), workers: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSection {
    #[serde(default = "default_station_name")]
    pub name: String,
    pub hourly: PathBuf,
}

fn default_station_name() -> String {
    "station".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub window_days: f64,
    pub min_valid_hours: u32,
    pub threshold_quantile: f64,
    pub separation_days: i64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            window_days: DEFAULT_WINDOW_DAYS,
            min_valid_hours: DEFAULT_MIN_VALID_HOURS,
            threshold_quantile: DEFAULT_THRESHOLD_QUANTILE,
            separation_days: DEFAULT_SEPARATION_DAYS,
        }
    }
}

/// Observational record plus model projection of one covariate. Monthly
/// files are reduced to annual values (DJF winter means for NAO).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateFiles {
    pub historical: PathBuf,
    pub projection: PathBuf,
    /// Last year taken from the historical file; defaults to its last year.
    #[serde(default)]
    pub switch_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatesSection {
    pub temperature: CovariateFiles,
    pub sea_level: CovariateFiles,
    pub nao: CovariateFiles,
}

impl CovariatesSection {
    /// Files for a covariate kind; time is generated, not read.
    pub fn files(&self, kind: CovariateKind) -> Option<&CovariateFiles> {
        match kind {
            CovariateKind::Time => None,
            CovariateKind::Temperature => Some(&self.temperature),
            CovariateKind::SeaLevel => Some(&self.sea_level),
            CovariateKind::NaoIndex => Some(&self.nao),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub start: i32,
    pub end: i32,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { start: CALIBRATION_START, end: CALIBRATION_END }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsSection {
    /// Pre-fitted station MLE vectors.
    pub mle_file: Option<PathBuf>,
    /// Directory of station records (hourly CSV or exceedance JSON) to fit.
    pub stations_dir: Option<PathBuf>,
    /// Adds the target station's own fit to the prior sample.
    pub include_target: bool,
}

impl Default for PriorsSection {
    fn default() -> Self {
        Self { mle_file: None, stations_dir: None, include_target: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub n_iterations: Option<usize>,
    pub n_chains: Option<usize>,
    pub thinned_size: Option<usize>,
    /// Defaults to 10% of the iterations.
    pub burn_in: Option<usize>,
    pub target_acceptance: f64,
    pub adaptation_decay: f64,
    pub psrf_gate: f64,
    pub force: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            n_iterations: None,
            n_chains: None,
            thinned_size: None,
            burn_in: None,
            target_acceptance: TARGET_ACCEPTANCE,
            adaptation_decay: ADAPTATION_DECAY,
            psrf_gate: PSRF_GATE,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvidenceSection {
    /// Unnormalized prior mass per structure id; missing ids get 1.
    pub model_prior: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HazardSection {
    pub projection_year: i32,
    pub return_periods: Vec<f64>,
    pub quantile_levels: Vec<f64>,
    pub mixture_size: usize,
}

impl Default for HazardSection {
    fn default() -> Self {
        Self {
            projection_year: PROJECTION_YEAR,
            return_periods: RETURN_PERIODS.to_vec(),
            quantile_levels: QUANTILE_LEVELS.to_vec(),
            mixture_size: DEFAULT_MIXTURE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub station: StationSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    pub covariates: CovariatesSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub priors: PriorsSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub evidence: EvidenceSection,
    #[serde(default)]
    pub hazard: HazardSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    pub fn structures(&self) -> Result<Vec<ModelStructure>> {
        if self.run.structures.is_empty() {
            return Ok(ModelStructure::all());
        }
        let mut out: Vec<ModelStructure> = Vec::new();
        for id in &self.run.structures {
            let s: ModelStructure = id.parse().map_err(|e: surgebma_core::Error| Error::Config(e.to_string()))?;
            if !out.contains(&s) {
                out.push(s);
            }
        }
        // canonical order regardless of how the list was written
        out.sort_by_key(|s| ModelStructure::all().iter().position(|a| a == s));
        Ok(out)
    }

    /// Sampler settings of the profile, with explicit fields taking
    /// precedence. `seed` is the per-structure chain seed.
    pub fn chain_config(&self, seed: u64) -> ChainConfig {
        let base = match self.run.profile {
            Profile::Desk => ChainConfig::desk_scale(seed),
            Profile::Paper => ChainConfig::paper_scale(seed),
        };
        let s = &self.sampler;
        let n_iterations = s.n_iterations.unwrap_or(base.n_iterations);
        ChainConfig {
            n_iterations,
            n_chains: s.n_chains.unwrap_or(base.n_chains),
            target_acceptance: s.target_acceptance,
            adaptation_decay: s.adaptation_decay,
            seed,
            burn_in: s.burn_in.unwrap_or(n_iterations / 10),
            thinned_size: s.thinned_size.unwrap_or(base.thinned_size),
            psrf_gate: s.psrf_gate,
        }
    }

    /// Input files the run reads, in a fixed order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut files = vec![self.resolve(&self.station.hourly)];
        for kind in CovariateKind::ALL {
            if let Some(f) = self.covariates.files(kind) {
                files.push(self.resolve(&f.historical));
                files.push(self.resolve(&f.projection));
            }
        }
        if let Some(p) = &self.priors.mle_file {
            files.push(self.resolve(p));
        }
        files
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for f in self.input_files() {
            if !f.is_file() {
                return bad(format!("input file {} does not exist", f.display()));
            }
        }
        if let Some(d) = &self.priors.stations_dir {
            if !self.resolve(d).is_dir() {
                return bad(format!("stations directory {} does not exist", self.resolve(d).display()));
            }
        }
        if self.priors.mle_file.is_none() && self.priors.stations_dir.is_none() {
            return bad("priors need `mle_file` or `stations_dir`".into());
        }
        let c = &self.calibration;
        if c.start > c.end {
            return bad(format!("calibration window {}-{} is empty", c.start, c.end));
        }
        if self.hazard.projection_year < c.start {
            return bad("projection year precedes the calibration window".into());
        }
        if self.hazard.return_periods.is_empty() || self.hazard.return_periods.iter().any(|t| !(*t > 0.0)) {
            return bad("return periods must be positive".into());
        }
        if self.hazard.quantile_levels.is_empty() || self.hazard.quantile_levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return bad("quantile levels must lie in (0, 1)".into());
        }
        if self.hazard.mixture_size == 0 {
            return bad("mixture_size must be positive".into());
        }
        let p = &self.preprocess;
        if !(p.window_days >= 1.0) || !(1..=24).contains(&p.min_valid_hours) || p.separation_days < 1 {
            return bad("invalid preprocessing settings".into());
        }
        if !(p.threshold_quantile > 0.0 && p.threshold_quantile < 1.0) {
            return bad("threshold_quantile must lie in (0, 1)".into());
        }
        self.structures()?;
        for id in self.evidence.model_prior.keys() {
            id.parse::<ModelStructure>().map_err(|e| Error::Config(format!("evidence.model_prior: {e}")))?;
        }
        self.chain_config(0).validate().map_err(|e| Error::Config(format!("sampler: {e}")))?;
        Ok(())
    }

    /// Everything that determines the results: the config minus output
    /// location and worker count, plus a digest of every input file.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(run) = value.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("output_dir");
            run.remove("workers");
        }
        let mut inputs = serde_json::Map::new();
        let mut files = self.input_files();
        if let Some(d) = &self.priors.stations_dir {
            files.extend(station_files(&self.resolve(d))?);
        }
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            let name = f.strip_prefix(&self.base_dir).unwrap_or(&f).to_string_lossy().into_owned();
            inputs.insert(name, serde_json::Value::String(hex_digest(&bytes)));
        }
        value["input_sha256"] = serde_json::Value::Object(inputs);
        Ok(value)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical JSON form of a config echo.
pub fn config_hash(echo: &serde_json::Value) -> String {
    hex_digest(echo.to_string().as_bytes())
}

/// Station record files (`.csv` hourly or `.json` exceedances), sorted.
pub fn station_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .collect();
    files.sort();
    Ok(files)
}
