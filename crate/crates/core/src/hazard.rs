//! Return levels from posterior ensembles and their BMA mixture.
//!
//! The `T`-year return level `z` solves `λ_yr · P(X > z) = 1/T`, the level
//! whose expected exceedance count per year is `1/T`, with
//! `λ_yr = 365.25 · λ(year)`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSeries;
use crate::error::{Error, Result};
use crate::evidence::BmaWeights;
use crate::math;
use crate::model::{params_at, ModelStructure, NonstationarityLevel, ParameterVector, XI_ZERO_CUTOFF};
use crate::sampler::PosteriorEnsemble;

pub const DAYS_PER_YEAR: f64 = 365.25;
/// Rate floor applied when an extrapolated `λ(year)` is not positive.
pub const LAMBDA_FLOOR: f64 = 1e-8;
pub const RETURN_PERIODS: [f64; 9] = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
pub const QUANTILE_LEVELS: [f64; 7] = [0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975];
pub const DEFAULT_MIXTURE_SIZE: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnLevel {
    pub meters: f64,
    /// `λ(year)` was not positive and was raised to [`LAMBDA_FLOOR`].
    pub clamped: bool,
}

/// Closed-form return level for given effective parameters.
pub fn return_level_from(lambda_per_day: f64, sigma: f64, xi: f64, mu: f64, period_years: f64) -> Result<f64> {
    if !(period_years > 0.0) {
        return Err(Error::InvalidArgument("return period must be positive".into()));
    }
    if !(sigma > 0.0) || !xi.is_finite() {
        return Err(Error::OutsideSupport);
    }
    let expected = period_years * lambda_per_day * DAYS_PER_YEAR;
    if !(expected >= 1.0) {
        return Err(Error::BelowThresholdRegime);
    }
    if xi.abs() < XI_ZERO_CUTOFF {
        Ok(mu + sigma * math::ln(expected))
    } else {
        Ok(mu + sigma / xi * (math::powf(expected, xi) - 1.0))
    }
}

pub fn return_level(
    theta: &ParameterVector,
    level: NonstationarityLevel,
    phi: f64,
    mu: f64,
    period_years: f64,
) -> Result<ReturnLevel> {
    let p = params_at(theta, level, phi);
    let clamped = !(p.lambda > 0.0);
    let lambda = if clamped { LAMBDA_FLOOR } else { p.lambda };
    let meters = return_level_from(lambda, p.sigma, p.xi, mu, period_years)?;
    Ok(ReturnLevel { meters, clamped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelEnsemble {
    pub year: i32,
    pub period_years: f64,
    /// One entry per draw; NaN marks a flagged draw.
    pub samples: Vec<f64>,
    /// Structure id or `"BMA"`.
    pub source: String,
    pub flagged: usize,
    pub clamped: usize,
}

impl ReturnLevelEnsemble {
    pub fn finite_samples(&self) -> Vec<f64> {
        self.samples.iter().copied().filter(|v| v.is_finite()).collect()
    }
}

/// Return level of every posterior draw for `year`.
pub fn ensemble_return_levels(
    ensemble: &PosteriorEnsemble,
    cov: Option<&CovariateSeries>,
    threshold: f64,
    year: i32,
    period_years: f64,
) -> Result<ReturnLevelEnsemble> {
    if ensemble.is_empty() {
        return Err(Error::EmptyInput);
    }
    let phi = match (ensemble.structure.covariate(), cov) {
        (None, _) => 0.0,
        (Some(_), Some(c)) => c.value_for_year(year)?,
        (Some(_), None) => {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} needs a covariate series",
                ensemble.structure
            )))
        }
    };
    let level = ensemble.structure.level();
    let (mut flagged, mut clamped) = (0, 0);
    let samples = ensemble
        .draws
        .iter()
        .map(|theta| match return_level(theta, level, phi, threshold, period_years) {
            Ok(r) => {
                clamped += r.clamped as usize;
                r.meters
            }
            Err(_) => {
                flagged += 1;
                f64::NAN
            }
        })
        .collect();
    if flagged == ensemble.len() {
        return Err(Error::AllDrawsFlagged);
    }
    Ok(ReturnLevelEnsemble {
        year,
        period_years,
        samples,
        source: ensemble.structure.id(),
        flagged,
        clamped,
    })
}

/// Samples the BMA predictive distribution: pick structure `k` with
/// probability `w_k`, then one of its samples uniformly.
pub fn bma_mixture<R: Rng + ?Sized>(
    ensembles: &[(ModelStructure, ReturnLevelEnsemble)],
    weights: &BmaWeights,
    mixture_size: usize,
    rng: &mut R,
) -> Result<ReturnLevelEnsemble> {
    if ensembles.len() != weights.weights.len() {
        return Err(Error::StructureMismatch);
    }
    let mut picked = Vec::with_capacity(ensembles.len());
    for (s, w) in &weights.weights {
        let (_, e) = ensembles.iter().find(|(es, _)| es == s).ok_or(Error::StructureMismatch)?;
        if e.samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        picked.push((e, *w));
    }
    let (year, period) = (picked[0].0.year, picked[0].0.period_years);
    if picked.iter().any(|(e, _)| e.year != year || e.period_years != period) {
        return Err(Error::InvalidArgument("ensembles disagree on year or return period".into()));
    }
    let chooser = WeightedIndex::new(picked.iter().map(|(_, w)| *w))
        .map_err(|_| Error::InvalidArgument("invalid BMA weights".into()))?;
    let samples: Vec<f64> = (0..mixture_size)
        .map(|_| {
            let (e, _) = picked[chooser.sample(rng)];
            e.samples[rng.random_range(0..e.samples.len())]
        })
        .collect();
    let flagged = samples.iter().filter(|v| !v.is_finite()).count();
    Ok(ReturnLevelEnsemble {
        year,
        period_years: period,
        samples,
        source: String::from("BMA"),
        flagged,
        clamped: 0,
    })
}

/// Quantile table: one row per return period, one column per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardReport {
    pub year: i32,
    pub periods: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
}

impl HazardReport {
    pub fn quantile(&self, period: f64, level: f64) -> Option<f64> {
        let i = self.periods.iter().position(|p| *p == period)?;
        let j = self.levels.iter().position(|l| *l == level)?;
        Some(self.quantiles[i][j])
    }

    pub fn median(&self, period: f64) -> Option<f64> {
        self.quantile(period, 0.5)
    }

    /// Central 90% credible range (5% to 95%).
    pub fn band90(&self, period: f64) -> Option<(f64, f64)> {
        Some((self.quantile(period, 0.05)?, self.quantile(period, 0.95)?))
    }
}

pub fn hazard_report(mixtures: &[ReturnLevelEnsemble], levels: &[f64]) -> Result<HazardReport> {
    let first = mixtures.first().ok_or(Error::EmptyInput)?;
    let mut periods = Vec::with_capacity(mixtures.len());
    let mut quantiles = Vec::with_capacity(mixtures.len());
    for m in mixtures {
        let mut finite = m.finite_samples();
        if finite.is_empty() {
            return Err(Error::AllDrawsFlagged);
        }
        finite.sort_by(f64::total_cmp);
        periods.push(m.period_years);
        quantiles.push(levels.iter().map(|q| math::quantile_sorted(&finite, *q)).collect());
    }
    Ok(HazardReport { year: first.year, periods, levels: levels.to_vec(), quantiles })
}
