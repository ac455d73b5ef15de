//! Pipeline stages. Each stage reads the artifacts of the previous ones from
//! the output directory and writes its own; the pure helpers underneath work
//! on in-memory values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surgebma_core::covariates::{
    annualize, normalize_minmax, splice, time_series, winter_mean_nao, AnnualSeries, CovariateKind, CovariateSeries,
};
use surgebma_core::evidence::{
    aggregate_by_covariate, bma_weights_with_prior, bridge_evidence, covariate_weights, BmaWeights, EvidenceEstimate,
};
use surgebma_core::hazard::{bma_mixture, ensemble_return_levels, hazard_report, HazardReport, ReturnLevelEnsemble};
use surgebma_core::mle::{map_fit, mle_fit_prepared};
use surgebma_core::model::{ModelData, ModelStructure, ParameterVector, Posterior};
use surgebma_core::preprocess::{compute_threshold, daily_maxima, decluster, detrend_moving_mean, ExceedanceSet, HourlySeries};
use surgebma_core::priors::{elicit_priors, PriorSet};
use surgebma_core::sampler::{initial_factor, pool_and_thin, run_chain, ChainConfig, Diagnostics, PosteriorEnsemble};

use crate::config::{config_hash, station_files, HazardSection, PreprocessSection, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, DiagnosticsFile, EvidenceFile, EvidenceRow, ExceedanceFile, MleRow, PriorTable, PriorsFile, ProjectionFile, QuantileTable};

pub const RUN_CONFIG: &str = "run_config.json";
pub const EXCEEDANCES: &str = "exceedances.json";
pub const COVARIATES: &str = "covariates.json";
pub const STATION_MLE: &str = "station_mle.csv";
pub const PRIORS: &str = "priors.json";
pub const CALIBRATION_DIR: &str = "calibration";
pub const EVIDENCE: &str = "evidence.json";
pub const PROJECTION: &str = "projection.json";
pub const REPORT_DIR: &str = "report";
pub const AGGREGATE_WEIGHTS: &str = "report/aggregate_weights.csv";
pub const COVARIATE_WEIGHTS: &str = "report/covariate_weights.csv";
pub const STRUCTURE_WEIGHTS: &str = "report/structure_weights.csv";
pub const RETURN_LEVELS: &str = "report/return_levels.csv";
pub const RETURN_CURVE: &str = "report/return_curve.json";

/// Seed for one named job, independent of which other jobs run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The four normalized covariate series of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub series: Vec<CovariateSeries>,
}

impl Covariates {
    pub fn get(&self, kind: CovariateKind) -> Option<&CovariateSeries> {
        self.series.iter().find(|s| s.kind == kind)
    }

    pub fn for_structure(&self, structure: ModelStructure) -> Option<&CovariateSeries> {
        structure.covariate().and_then(|k| self.get(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatesFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub covariates: Covariates,
}

/// Hourly record to declustered exceedances over its whole span.
pub fn preprocess_record(series: &HourlySeries, p: &PreprocessSection) -> Result<ExceedanceSet> {
    let detrended = detrend_moving_mean(series, p.window_days)?;
    let daily = daily_maxima(&detrended, p.min_valid_hours)?;
    let threshold = compute_threshold(&daily, p.threshold_quantile)?;
    Ok(decluster(&daily, threshold, p.separation_days)?)
}

/// Restricts a record to the calibration window, which it must cover.
pub fn calibration_set(set: &ExceedanceSet, window: (i32, i32), source: &Path) -> Result<ExceedanceSet> {
    match (set.first_year(), set.last_year()) {
        (Some(a), Some(b)) if a <= window.0 && b >= window.1 => Ok(set.trimmed(window.0, window.1)),
        (Some(a), Some(b)) => Err(Error::input(
            source,
            format!("record spans {a}-{b} but the calibration window is {}-{}", window.0, window.1),
        )),
        _ => Err(surgebma_core::Error::EmptyInput.into()),
    }
}

fn annual_values(kind: CovariateKind, table: io::CovariateTable, path: &Path) -> Result<AnnualSeries> {
    Ok(match table {
        io::CovariateTable::Annual(rows) => rows,
        io::CovariateTable::Monthly(rows) if kind == CovariateKind::NaoIndex => winter_mean_nao(&rows).values,
        io::CovariateTable::Monthly(rows) => {
            let dated = rows
                .iter()
                .map(|(y, m, v)| {
                    NaiveDate::from_ymd_opt(*y, *m, 1)
                        .map(|d| (d, *v))
                        .ok_or_else(|| Error::input(path, format!("invalid month {y}-{m}")))
                })
                .collect::<Result<Vec<_>>>()?;
            annualize(&dated)?
        }
    })
}

/// Normalizes raw annual series over `window` and checks that every year of
/// the window plus `projection_year` is covered.
pub fn covariates_from_raw(
    raw: Vec<(CovariateKind, AnnualSeries)>,
    window: (i32, i32),
    projection_year: i32,
) -> Result<Covariates> {
    let mut series = Vec::with_capacity(raw.len());
    for (kind, values) in raw {
        let s = normalize_minmax(kind, &values, window)
            .map_err(|e| Error::Config(format!("covariate {}: {e}", kind.as_str())))?;
        for year in (window.0..=window.1).chain([projection_year]) {
            s.value_for_year(year).map_err(|e| Error::Config(format!("covariate {}: {e}", kind.as_str())))?;
        }
        series.push(s);
    }
    Ok(Covariates { series })
}

/// Reads, splices and normalizes the configured covariates. Time is
/// generated (raw value = calendar year).
pub fn build_covariates(config: &RunConfig) -> Result<Covariates> {
    let window = (config.calibration.start, config.calibration.end);
    let horizon = config.hazard.projection_year.max(window.1);
    let mut raw = Vec::new();
    for kind in CovariateKind::ALL {
        let values = match config.covariates.files(kind) {
            None => time_series(window.0, horizon),
            Some(files) => {
                let hist_path = config.resolve(&files.historical);
                let proj_path = config.resolve(&files.projection);
                let hist = annual_values(kind, io::read_covariate_csv(&hist_path)?, &hist_path)?;
                let proj = annual_values(kind, io::read_covariate_csv(&proj_path)?, &proj_path)?;
                let switch = match files.switch_year {
                    Some(y) => y,
                    None => hist.iter().map(|e| e.0).max().ok_or(surgebma_core::Error::EmptyInput)?,
                };
                splice(&hist, &proj, switch).map_err(|e| Error::input(&proj_path, format!("{}: {e}", kind.as_str())))?
            }
        };
        raw.push((kind, values));
    }
    covariates_from_raw(raw, window, config.hazard.projection_year)
}

/// A named exceedance record used for prior elicitation.
#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub name: String,
    pub set: ExceedanceSet,
}

/// Maximum-likelihood fit of every (station, structure) pair. Pairs whose
/// fit fails are returned as `(station, structure, reason)`.
pub fn fit_station_mles(
    stations: &[StationRecord],
    covariates: &Covariates,
    structures: &[ModelStructure],
    seed: u64,
) -> (Vec<MleRow>, Vec<(String, ModelStructure, String)>) {
    let jobs: Vec<(&StationRecord, ModelStructure)> =
        stations.iter().flat_map(|st| structures.iter().map(move |s| (st, *s))).collect();
    let fits: Vec<_> = jobs
        .par_iter()
        .map(|(station, structure)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mle/{}/{structure}", station.name)));
            let fit = ModelData::new(&station.set, covariates.for_structure(*structure))
                .and_then(|data| mle_fit_prepared(*structure, &data, &mut rng));
            (station.name.clone(), *structure, fit)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (station, structure, fit) in fits {
        match fit {
            Ok(theta) => rows.push(MleRow { station, structure, theta }),
            Err(e) => failed.push((station, structure, e.to_string())),
        }
    }
    (rows, failed)
}

/// Moment-matched priors for each structure from the station fits.
pub fn elicit_prior_table(rows: &[MleRow], structures: &[ModelStructure]) -> Result<PriorTable> {
    let mut table = PriorTable::new();
    for s in structures {
        let thetas: Vec<ParameterVector> = rows.iter().filter(|r| r.structure == *s).map(|r| r.theta).collect();
        let set = elicit_priors(*s, &thetas).map_err(|e| Error::Config(format!("priors for {s}: {e}")))?;
        table.insert(*s, set.params);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub ensemble: PosteriorEnsemble,
    /// Starting point of every chain.
    pub init: ParameterVector,
}

/// Starting point: the MLE, or the posterior mode when the prior rules the
/// MLE out.
pub fn initial_point(posterior: &Posterior, seed: u64) -> Result<ParameterVector> {
    let structure = posterior.structure();
    let level = structure.level();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mle = mle_fit_prepared(structure, posterior.data(), &mut rng)
        .ok()
        .filter(|t| posterior.log_density(&t.active(level)).is_finite());
    match mle {
        Some(t) => Ok(t),
        None => Ok(map_fit(posterior, &mut rng)?),
    }
}

/// Runs the chains of one structure in parallel, then pools and thins.
pub fn calibrate_structure(
    posterior: &Posterior,
    chains: &ChainConfig,
    force: bool,
    init_seed: u64,
    thin_seed: u64,
) -> Result<Calibration> {
    chains.validate()?;
    let structure = posterior.structure();
    let init = initial_point(posterior, init_seed)?;
    let x0 = init.active(structure.level());
    let factor = initial_factor(&x0);
    let target = |x: &[f64]| posterior.log_density(x);
    let runs = (0..chains.n_chains)
        .into_par_iter()
        .map(|k| run_chain(&target, &x0, &factor, chains, k))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let ensemble = pool_and_thin(structure, &runs, chains, force, &mut ChaCha8Rng::seed_from_u64(thin_seed))?;
    Ok(Calibration { ensemble, init })
}

pub fn structure_evidence(ensemble: &PosteriorEnsemble, posterior: &Posterior, seed: u64) -> Result<EvidenceEstimate> {
    Ok(bridge_evidence(ensemble, posterior, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

/// BMA weights under the configured model prior (missing ids weigh 1).
pub fn model_weights(evidences: &[EvidenceEstimate], model_prior: &BTreeMap<String, f64>) -> Result<BmaWeights> {
    let prior: Vec<f64> = evidences
        .iter()
        .map(|e| model_prior.get(&e.structure.id()).copied().unwrap_or(1.0))
        .collect();
    Ok(bma_weights_with_prior(evidences, &prior)?)
}

/// Model-averaged and per-structure return-level quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub bma: HazardReport,
    pub bma_flagged: Vec<usize>,
    pub structures: Vec<(ModelStructure, HazardReport, Vec<usize>, Vec<usize>)>,
}

/// Every return period uses a mixture generator seeded with `mixture_seed`,
/// so the draws behind different periods line up.
pub fn project(
    ensembles: &[PosteriorEnsemble],
    covariates: &Covariates,
    threshold: f64,
    weights: &BmaWeights,
    hazard: &HazardSection,
    mixture_seed: u64,
) -> Result<Projection> {
    let year = hazard.projection_year;
    let per_structure: Vec<Vec<ReturnLevelEnsemble>> = ensembles
        .par_iter()
        .map(|e| {
            hazard
                .return_periods
                .iter()
                .map(|t| ensemble_return_levels(e, covariates.for_structure(e.structure), threshold, year, *t))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut mixtures = Vec::with_capacity(hazard.return_periods.len());
    for i in 0..hazard.return_periods.len() {
        let members: Vec<(ModelStructure, ReturnLevelEnsemble)> =
            ensembles.iter().zip(&per_structure).map(|(e, r)| (e.structure, r[i].clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mixture_seed);
        mixtures.push(bma_mixture(&members, weights, hazard.mixture_size, &mut rng)?);
    }
    let bma = hazard_report(&mixtures, &hazard.quantile_levels)?;
    let bma_flagged = mixtures.iter().map(|m| m.flagged).collect();
    let structures = ensembles
        .iter()
        .zip(&per_structure)
        .map(|(e, r)| {
            let report = hazard_report(r, &hazard.quantile_levels)?;
            Ok((e.structure, report, r.iter().map(|x| x.flagged).collect(), r.iter().map(|x| x.clamped).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Projection { bma, bma_flagged, structures })
}

/// Resolved configuration plus its provenance hash.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_hash: String,
    pub echo: serde_json::Value,
}

#[derive(Serialize)]
struct RunConfigFile<'a> {
    config_hash: &'a str,
    config: &'a serde_json::Value,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let echo = config.echo()?;
        let config_hash = config_hash(&echo);
        Ok(Self { config, config_hash, echo })
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed(), label)
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.config.output_dir().join(relative)
    }

    fn ensemble_path(&self, s: ModelStructure) -> PathBuf {
        self.path(&format!("{CALIBRATION_DIR}/{s}.csv"))
    }

    fn diagnostics_path(&self, s: ModelStructure) -> PathBuf {
        self.path(&format!("{CALIBRATION_DIR}/{s}.diagnostics.json"))
    }

    fn window(&self) -> (i32, i32) {
        (self.config.calibration.start, self.config.calibration.end)
    }

    fn require(&self, names: &[String]) -> Result<()> {
        let missing: Vec<String> = names.iter().filter(|n| !self.path(n).is_file()).cloned().collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingArtifacts(missing))
        }
    }

    fn write_run_config(&self) -> Result<()> {
        io::write_json(&self.path(RUN_CONFIG), &RunConfigFile { config_hash: &self.config_hash, config: &self.echo })
    }

    fn load_inputs(&self) -> Result<(ExceedanceSet, Covariates)> {
        self.require(&[EXCEEDANCES.into(), COVARIATES.into()])?;
        let set = io::read_exceedances(&self.path(EXCEEDANCES))?.set;
        let covs: CovariatesFile = io::read_json(&self.path(COVARIATES))?;
        Ok((set, covs.covariates))
    }

    fn load_priors(&self) -> Result<PriorsFile> {
        self.require(&[PRIORS.into()])?;
        io::read_json(&self.path(PRIORS))
    }

    fn posterior(&self, s: ModelStructure, set: &ExceedanceSet, covs: &Covariates, priors: &PriorsFile) -> Result<Posterior> {
        let prior = priors
            .prior_set(s)
            .ok_or_else(|| Error::MissingArtifacts(vec![format!("{PRIORS} entry for {s}")]))?;
        Ok(Posterior::new(s, set, covs.for_structure(s), prior)?)
    }

    fn load_ensembles(&self, structures: &[ModelStructure]) -> Result<Vec<PosteriorEnsemble>> {
        let names: Vec<String> = structures.iter().map(|s| format!("{CALIBRATION_DIR}/{s}.csv")).collect();
        self.require(&names)?;
        structures
            .iter()
            .map(|s| {
                let draws = io::read_ensemble_csv(&self.ensemble_path(*s), *s)?;
                if draws.is_empty() {
                    return Err(Error::input(self.ensemble_path(*s), "no draws"));
                }
                let diagnostics = Diagnostics { psrf: Vec::new(), acceptance: Vec::new(), gate: 0.0, gate_passed: true, forced: false };
                Ok(PosteriorEnsemble { structure: *s, draws, diagnostics })
            })
            .collect()
    }
}

/// Writes the declustered exceedances and normalized covariates.
pub fn run_preprocess(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let path = c.resolve(&c.station.hourly);
    let hourly = io::read_hourly_csv(&path)?;
    let full = preprocess_record(&hourly, &c.preprocess)?;
    let set = calibration_set(&full, ctx.window(), &path)?;
    let covs = build_covariates(c)?;
    io::write_json(
        &ctx.path(EXCEEDANCES),
        &ExceedanceFile { config_hash: Some(ctx.config_hash.clone()), station: Some(c.station.name.clone()), set: set.clone() },
    )?;
    io::write_json(&ctx.path(COVARIATES), &CovariatesFile { config_hash: ctx.config_hash.clone(), covariates: covs })?;
    ctx.write_run_config()?;

    let mut out = String::new();
    let _ = writeln!(out, "station {}: threshold {:.4} m", c.station.name, set.threshold);
    let _ = writeln!(out, "year  events  valid_days");
    for b in &set.years {
        let _ = writeln!(out, "{}  {:>6}  {:>10}", b.year, b.count, b.duration_days);
    }
    let _ = writeln!(out, "total events {} in {} years", set.total_count(), set.years.len());
    Ok(out)
}

fn load_station(path: &Path, config: &RunConfig, window: (i32, i32)) -> Result<Option<StationRecord>> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let set = if path.extension().and_then(|e| e.to_str()) == Some("json") {
        io::read_exceedances(path)?.set
    } else {
        preprocess_record(&io::read_hourly_csv(path)?, &config.preprocess)?
    };
    let set = set.trimmed(window.0, window.1);
    Ok((!set.years.is_empty()).then_some(StationRecord { name, set }))
}

/// Fits the regional station records and elicits a prior per structure.
pub fn run_fit_priors(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let structures = c.structures()?;
    let (target, covs) = ctx.load_inputs()?;
    let mut rows = Vec::new();
    if let Some(f) = &c.priors.mle_file {
        rows.extend(io::read_mle_csv(&c.resolve(f))?);
    }
    let mut stations = Vec::new();
    let mut out = String::new();
    if let Some(dir) = &c.priors.stations_dir {
        for f in station_files(&c.resolve(dir))? {
            match load_station(&f, c, ctx.window())? {
                Some(s) => stations.push(s),
                None => {
                    let _ = writeln!(out, "note: {} has no years in the calibration window", f.display());
                }
            }
        }
    }
    if c.priors.include_target {
        stations.push(StationRecord { name: c.station.name.clone(), set: target });
    }
    let (fitted, failed) = fit_station_mles(&stations, &covs, &structures, ctx.seed());
    for (station, s, reason) in &failed {
        let _ = writeln!(out, "note: {station} {s} fit skipped: {reason}");
    }
    rows.extend(fitted);
    let priors = elicit_prior_table(&rows, &structures)?;
    io::write_mle_csv(&ctx.path(STATION_MLE), Some(&ctx.config_hash), &rows)?;
    io::write_json(&ctx.path(PRIORS), &PriorsFile { config_hash: ctx.config_hash.clone(), priors })?;
    ctx.write_run_config()?;
    let names: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.station.as_str()).collect();
    let _ = writeln!(out, "priors for {} structures from {} stations ({} fits)", structures.len(), names.len(), rows.len());
    Ok(out)
}

fn gate_warning(d: &Diagnostics) -> Option<String> {
    d.forced.then(|| {
        let bad: Vec<String> = d
            .psrf
            .iter()
            .filter(|(_, r)| !(*r < d.gate))
            .map(|(p, r)| format!("{}={r:.3}", p.name()))
            .collect();
        format!("PSRF gate {} not met ({}); pooled because of --force", d.gate, bad.join(", "))
    })
}

/// Calibrates the configured structures in parallel. Successful structures
/// are written even when another one fails.
pub fn run_calibrate(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let structures = c.structures()?;
    let (set, covs) = ctx.load_inputs()?;
    let priors = ctx.load_priors()?;
    let results: Vec<(ModelStructure, Result<(Calibration, ChainConfig)>)> = structures
        .par_iter()
        .map(|s| {
            let run = || {
                let posterior = ctx.posterior(*s, &set, &covs, &priors)?;
                let cfg = c.chain_config(ctx.seed_for(&format!("chains/{s}")));
                let cal = calibrate_structure(
                    &posterior,
                    &cfg,
                    c.sampler.force,
                    ctx.seed_for(&format!("init/{s}")),
                    ctx.seed_for(&format!("thin/{s}")),
                )?;
                Ok((cal, cfg))
            };
            (*s, run())
        })
        .collect();

    let mut out = String::new();
    let mut first_error = None;
    for (s, result) in results {
        match result {
            Ok((cal, cfg)) => {
                let d = &cal.ensemble.diagnostics;
                let warning = gate_warning(d);
                io::write_ensemble_csv(&ctx.ensemble_path(s), &ctx.config_hash, &cal.ensemble)?;
                let params = s.level().active_params();
                let file = DiagnosticsFile {
                    config_hash: ctx.config_hash.clone(),
                    structure: s,
                    seed: ctx.seed(),
                    structure_seed: cfg.seed,
                    n_iterations: cfg.n_iterations,
                    n_chains: cfg.n_chains,
                    burn_in: cfg.burn_in,
                    thinned_size: cfg.thinned_size,
                    initial_point: params.iter().map(|p| (*p, cal.init.get(*p))).collect(),
                    diagnostics: d.clone(),
                    warning: warning.clone(),
                    config: ctx.echo.clone(),
                };
                io::write_json(&ctx.diagnostics_path(s), &file)?;
                let max_psrf = d.psrf.iter().map(|(_, r)| *r).fold(f64::NAN, f64::max);
                let mean_acc = d.acceptance.iter().sum::<f64>() / d.acceptance.len().max(1) as f64;
                let _ = writeln!(out, "{:<16} max PSRF {max_psrf:.4}  acceptance {mean_acc:.3}  draws {}", s.id(), cal.ensemble.len());
                if let Some(w) = warning {
                    let _ = writeln!(out, "warning: {s}: {w}");
                }
            }
            Err(e) => {
                let _ = writeln!(out, "{:<16} failed: {e}", s.id());
                first_error.get_or_insert(e);
            }
        }
    }
    ctx.write_run_config()?;
    match first_error {
        Some(e) => {
            eprint!("{out}");
            Err(e)
        }
        None => Ok(out),
    }
}

/// Bridge-sampled evidence and BMA weights of the calibrated structures.
pub fn run_evidence(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let structures = c.structures()?;
    let (set, covs) = ctx.load_inputs()?;
    let priors = ctx.load_priors()?;
    let ensembles = ctx.load_ensembles(&structures)?;
    let estimates = ensembles
        .par_iter()
        .map(|e| {
            let posterior = ctx.posterior(e.structure, &set, &covs, &priors)?;
            structure_evidence(e, &posterior, ctx.seed_for(&format!("bridge/{}", e.structure)))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = model_weights(&estimates, &c.evidence.model_prior)?;
    let rows: Vec<EvidenceRow> = estimates
        .iter()
        .zip(&weights.weights)
        .map(|(e, (_, w))| EvidenceRow {
            structure: e.structure,
            log_evidence: e.log_evidence,
            log_evidence_se: e.log_evidence_se,
            iterations_used: e.iterations_used,
            relative_change_at_stop: e.relative_change_at_stop,
            converged: e.converged,
            weight: *w,
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "structure         log evidence        se   weight");
    for r in &rows {
        let _ = writeln!(out, "{:<16} {:>13.4} {:>9.4} {:>8.4}", r.structure.id(), r.log_evidence, r.log_evidence_se, r.weight);
        if !r.converged {
            let _ = writeln!(out, "note: {} bridge iteration stopped at relative change {:.2e}", r.structure, r.relative_change_at_stop);
        }
    }
    io::write_json(
        &ctx.path(EVIDENCE),
        &EvidenceFile { config_hash: ctx.config_hash.clone(), seed: ctx.seed(), structures: rows, config: ctx.echo.clone() },
    )?;
    ctx.write_run_config()?;
    Ok(out)
}

fn load_evidence(ctx: &Context) -> Result<EvidenceFile> {
    ctx.require(&[EVIDENCE.into()])?;
    io::read_json(&ctx.path(EVIDENCE))
}

fn evidence_estimates(file: &EvidenceFile) -> Vec<EvidenceEstimate> {
    file.structures
        .iter()
        .map(|r| EvidenceEstimate {
            structure: r.structure,
            log_evidence: r.log_evidence,
            log_evidence_se: r.log_evidence_se,
            iterations_used: r.iterations_used,
            relative_change_at_stop: r.relative_change_at_stop,
            converged: r.converged,
        })
        .collect()
}

fn stored_weights(file: &EvidenceFile) -> BmaWeights {
    BmaWeights { weights: file.structures.iter().map(|r| (r.structure, r.weight)).collect() }
}

/// Return-level quantiles for the projection year, model-averaged and per
/// structure.
pub fn run_project(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let evidence = load_evidence(ctx)?;
    let (set, covs) = ctx.load_inputs()?;
    let structures: Vec<ModelStructure> = evidence.structures.iter().map(|r| r.structure).collect();
    let ensembles = ctx.load_ensembles(&structures)?;
    let weights = stored_weights(&evidence);
    let p = project(&ensembles, &covs, set.threshold, &weights, &c.hazard, ctx.seed_for("mixture"))?;
    let file = ProjectionFile {
        config_hash: ctx.config_hash.clone(),
        seed: ctx.seed(),
        year: c.hazard.projection_year,
        mixture_size: c.hazard.mixture_size,
        periods: p.bma.periods.clone(),
        levels: p.bma.levels.clone(),
        bma: QuantileTable {
            source: "BMA".into(),
            quantiles: p.bma.quantiles.clone(),
            flagged: p.bma_flagged.clone(),
            clamped: vec![0; p.bma.periods.len()],
        },
        structures: p
            .structures
            .iter()
            .map(|(s, r, flagged, clamped)| QuantileTable {
                source: s.id(),
                quantiles: r.quantiles.clone(),
                flagged: flagged.clone(),
                clamped: clamped.clone(),
            })
            .collect(),
        config: ctx.echo.clone(),
    };
    io::write_json(&ctx.path(PROJECTION), &file)?;
    ctx.write_run_config()?;
    let mut out = String::new();
    let _ = writeln!(out, "BMA return levels for {} (median [5%, 95%], m)", c.hazard.projection_year);
    for t in &p.bma.periods {
        if let (Some(m), Some((lo, hi))) = (p.bma.median(*t), p.bma.band90(*t)) {
            let _ = writeln!(out, "T={t:<6} {m:.3} [{lo:.3}, {hi:.3}]");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub return_period: f64,
    pub levels: Vec<f64>,
}

/// Plot-ready return-level curve: one point per return period with a
/// value per quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnCurve {
    pub config_hash: String,
    pub year: i32,
    pub quantile_levels: Vec<f64>,
    pub labels: Vec<String>,
    pub points: Vec<CurvePoint>,
}

/// Weight tables, the return-level table and the curve data.
pub fn run_report(ctx: &Context) -> Result<String> {
    let c = &ctx.config;
    let requested = c.structures()?;
    let evidence = load_evidence(ctx)?;
    let mut missing: Vec<String> = requested
        .iter()
        .filter(|s| !evidence.structures.iter().any(|r| r.structure == **s))
        .map(|s| format!("{EVIDENCE} entry for {s}"))
        .collect();
    missing.extend(
        requested
            .iter()
            .map(|s| format!("{CALIBRATION_DIR}/{s}.csv"))
            .filter(|n| !ctx.path(n).is_file()),
    );
    if !ctx.path(PROJECTION).is_file() {
        missing.push(PROJECTION.into());
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let projection: ProjectionFile = io::read_json(&ctx.path(PROJECTION))?;
    let weights = stored_weights(&evidence);
    let estimates = evidence_estimates(&evidence);
    let hash = &ctx.config_hash;
    let mut out = String::new();

    let structure_rows: Vec<(String, Vec<f64>)> = evidence
        .structures
        .iter()
        .map(|r| (r.structure.id(), vec![r.log_evidence, r.log_evidence_se, r.weight]))
        .collect();
    io::write_rows_csv(&ctx.path(STRUCTURE_WEIGHTS), hash, &["structure", "log_evidence", "log_evidence_se", "weight"], &structure_rows)?;

    if weights.weights.len() == ModelStructure::all().len() {
        let groups = aggregate_by_covariate(&weights)?;
        let rows: Vec<(String, Vec<f64>)> = groups.iter().map(|(g, w)| (g.label().to_string(), vec![*w])).collect();
        io::write_rows_csv(&ctx.path(AGGREGATE_WEIGHTS), hash, &["covariate", "weight"], &rows)?;
        let _ = writeln!(out, "aggregated BMA weights");
        for (label, w) in &rows {
            let _ = writeln!(out, "  {label:<12} {:.3}", w[0]);
        }
    } else {
        let _ = writeln!(out, "note: aggregated weights need all 13 structures; {} skipped", AGGREGATE_WEIGHTS);
    }

    let mut cov_rows = Vec::new();
    for kind in CovariateKind::ALL {
        let family = ModelStructure::for_covariate(kind);
        if family.iter().all(|s| weights.get(*s).is_some()) {
            let w = covariate_weights(&estimates, kind)?;
            cov_rows.push((kind.as_str().to_string(), family.iter().map(|s| w.get(*s).unwrap_or(0.0)).collect()));
        }
    }
    io::write_rows_csv(&ctx.path(COVARIATE_WEIGHTS), hash, &["covariate", "ST", "NS1", "NS2", "NS3"], &cov_rows)?;

    io::write_quantile_table_csv(&ctx.path(RETURN_LEVELS), hash, &projection.periods, &projection.levels, &projection.bma.quantiles)?;
    let curve = ReturnCurve {
        config_hash: hash.clone(),
        year: projection.year,
        quantile_levels: projection.levels.clone(),
        labels: projection.levels.iter().map(|l| io::level_label(*l)).collect(),
        points: projection
            .periods
            .iter()
            .zip(&projection.bma.quantiles)
            .map(|(t, q)| CurvePoint { return_period: *t, levels: q.clone() })
            .collect(),
    };
    io::write_json(&ctx.path(RETURN_CURVE), &curve)?;
    ctx.write_run_config()?;

    let t100 = projection.periods.iter().position(|t| *t == 100.0);
    if let Some(i) = t100 {
        let row: Vec<String> = projection.bma.quantiles[i].iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(out, "T=100 return level {} quantiles: {}", projection.year, row.join(" "));
    }
    let _ = writeln!(out, "report written to {}", ctx.path(REPORT_DIR).display());
    Ok(out)
}

/// Every stage in order.
pub fn run_all(ctx: &Context) -> Result<String> {
    let mut out = String::new();
    for stage in [run_preprocess, run_fit_priors, run_calibrate, run_evidence, run_project, run_report] {
        out.push_str(&stage(ctx)?);
    }
    Ok(out)
}

/// Prior set of one structure from a loaded table.
pub fn prior_set(table: &PriorTable, structure: ModelStructure) -> Option<PriorSet> {
    table.get(&structure).map(|params| PriorSet { structure, params: params.clone() })
}
