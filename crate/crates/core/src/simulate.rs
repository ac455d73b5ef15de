//! Forward simulation of PP/GPD exceedance records from known parameters,
//! plus a minimal hourly tide-gauge generator for ingestion fixtures.

use alloc::vec::Vec;

use chrono::NaiveDate;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateSeries;
use crate::error::{Error, Result};
use crate::hazard::DAYS_PER_YEAR;
use crate::math;
use crate::model::{params_at, ModelStructure, NonstationarityLevel, ParameterVector, XI_ZERO_CUTOFF};
use crate::preprocess::{day_number, ExceedanceRecord, ExceedanceSet, HourlySeries, YearBlock};

/// Simulated records sit on every third day-of-year up to day 360, so they
/// stay at least three days apart within and across years.
const DATE_SLOTS: usize = 121;
const SLOT_SPACING: u64 = 3;

/// One GPD draw by inversion: `μ + σ/ξ [(1 - U)^(-ξ) - 1]`.
pub fn sample_gpd<R: Rng + ?Sized>(sigma: f64, xi: f64, mu: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if xi.abs() < XI_ZERO_CUTOFF {
        mu - sigma * math::ln_1p(-u)
    } else {
        mu + sigma / xi * (math::powf(1.0 - u, -xi) - 1.0)
    }
}

fn sample_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map_or(0, |p| p.sample(rng) as usize)
}

/// Heights of one year's exceedances: `n ~ Poisson(λ Δt)`, each GPD above `μ`.
pub fn simulate_year<R: Rng + ?Sized>(
    lambda: f64,
    sigma: f64,
    xi: f64,
    mu: f64,
    duration_days: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = sample_count(lambda * duration_days, rng);
    (0..n).map(|_| sample_gpd(sigma, xi, mu, rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub theta: ParameterVector,
    pub structure: ModelStructure,
    /// Required for nonstationary structures.
    pub cov: Option<CovariateSeries>,
    pub first_year: i32,
    pub last_year: i32,
    pub threshold: f64,
    pub seed: u64,
}

impl SimulationSpec {
    fn phi(&self, year: i32) -> Result<f64> {
        match (self.structure.covariate(), &self.cov) {
            (None, _) => Ok(0.0),
            (Some(_), Some(c)) => c.value_for_year(year),
            (Some(_), None) => Err(Error::InvalidSpec(alloc::format!("{} needs a covariate", self.structure))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.last_year < self.first_year {
            return Err(Error::InvalidSpec("empty year range".into()));
        }
        for year in self.first_year..=self.last_year {
            let p = params_at(&self.theta, self.structure.level(), self.phi(year)?);
            if !(p.lambda > 0.0) || !(p.sigma > 0.0) || !p.xi.is_finite() {
                return Err(Error::InvalidSpec(alloc::format!("invalid parameters in year {year}")));
            }
        }
        Ok(())
    }
}

fn days_in_year(year: i32) -> f64 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366.0
    } else {
        365.0
    }
}

/// Synthetic exceedance set: every year fully observed, dates spaced at
/// least three days apart. Deterministic given `spec.seed`.
pub fn simulate_record(spec: &SimulationSpec) -> Result<ExceedanceSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let level = spec.structure.level();
    let mut years = Vec::new();
    for year in spec.first_year..=spec.last_year {
        let p = params_at(&spec.theta, level, spec.phi(year)?);
        let duration = days_in_year(year);
        let heights = simulate_year(p.lambda, p.sigma, p.xi, spec.threshold, duration, &mut rng);
        if heights.len() > DATE_SLOTS {
            return Err(Error::InvalidSpec(alloc::format!(
                "{} exceedances in {year} cannot be spaced three days apart",
                heights.len()
            )));
        }
        let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(|| Error::InvalidSpec("year out of range".into()))?;
        let records = index::sample(&mut rng, DATE_SLOTS, heights.len())
            .into_iter()
            .zip(heights)
            .map(|(slot, height)| ExceedanceRecord {
                date: jan1 + chrono::Days::new(slot as u64 * SLOT_SPACING),
                height,
            })
            .collect();
        years.push(YearBlock::new(year, records, duration));
    }
    Ok(ExceedanceSet { threshold: spec.threshold, years })
}

/// Monte-Carlo `T`-year return level: the `1 - 1/T` quantile of simulated
/// annual maxima (years without exceedances count as below threshold).
pub fn empirical_return_level<R: Rng + ?Sized>(
    theta: &ParameterVector,
    level: NonstationarityLevel,
    phi: f64,
    mu: f64,
    period_years: f64,
    n_sim_years: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(period_years > 1.0) || (n_sim_years as f64) < 100.0 * period_years {
        return Err(Error::InvalidArgument("need period > 1 and n_sim_years >= 100 T".into()));
    }
    let p = params_at(theta, level, phi);
    if !(p.lambda > 0.0) || !(p.sigma > 0.0) {
        return Err(Error::OutsideSupport);
    }
    let mean = p.lambda * DAYS_PER_YEAR;
    let mut maxima: Vec<f64> = (0..n_sim_years)
        .map(|_| {
            let n = sample_count(mean, rng);
            (0..n)
                .map(|_| sample_gpd(p.sigma, p.xi, mu, rng))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let q = 1.0 - 1.0 / period_years;
    let h = (n_sim_years - 1) as f64 * q;
    if !maxima[libm::floor(h) as usize].is_finite() {
        return Err(Error::TooFewExceedances);
    }
    Ok(math::quantile_sorted(&maxima, q))
}

/// Hourly fixture: linear trend, a semidiurnal tide of amplitude
/// `tide_amplitude`, and a daily Gaussian surge whose spread puts the 99th
/// percentile of detrended daily maxima near `target_threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyFixtureSpec {
    pub first_year: i32,
    pub last_year: i32,
    pub target_threshold: f64,
    pub tide_amplitude: f64,
    pub trend_m_per_year: f64,
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for HourlyFixtureSpec {
    fn default() -> Self {
        Self {
            first_year: 1994,
            last_year: 2013,
            target_threshold: 1.0,
            tide_amplitude: 0.5,
            trend_m_per_year: 0.0045,
            missing_fraction: 0.01,
            seed: 1,
        }
    }
}

/// Standard normal 99th percentile.
const Z99: f64 = 2.326_347_874_040_841;
const SEMIDIURNAL_HOURS: f64 = 12.42;

pub fn synthetic_hourly(spec: &HourlyFixtureSpec) -> Result<HourlySeries> {
    let surge_sd = (spec.target_threshold - spec.tide_amplitude) / Z99;
    if !(surge_sd > 0.0) || spec.last_year < spec.first_year || !(0.0..1.0).contains(&spec.missing_fraction) {
        return Err(Error::InvalidSpec("hourly fixture parameters".into()));
    }
    let surge = Normal::new(0.0, surge_sd).map_err(|_| Error::InvalidSpec("surge spread".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = NaiveDate::from_ymd_opt(spec.first_year, 1, 1).ok_or_else(|| Error::InvalidSpec("year".into()))?;
    let end = NaiveDate::from_ymd_opt(spec.last_year, 12, 31).ok_or_else(|| Error::InvalidSpec("year".into()))?;
    let (d0, d1) = (day_number(start), day_number(end));
    let mut timestamps = Vec::with_capacity(((d1 - d0 + 1) * 24) as usize);
    let mut levels = Vec::with_capacity(timestamps.capacity());
    for day in d0..=d1 {
        let daily_surge = surge.sample(&mut rng);
        for hour in 0..24 {
            let t = day * 24 + hour;
            let years = (day - d0) as f64 / DAYS_PER_YEAR;
            let tide = spec.tide_amplitude * libm::cos(2.0 * core::f64::consts::PI * t as f64 / SEMIDIURNAL_HOURS);
            let level = spec.trend_m_per_year * years + tide + daily_surge;
            timestamps.push(t);
            levels.push(if rng.random::<f64>() < spec.missing_fraction { None } else { Some(level) });
        }
    }
    HourlySeries::new(timestamps, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateKind;
    use alloc::vec;

    #[test]
    fn same_seed_same_record() {
        let spec = SimulationSpec {
            theta: ParameterVector([0.01, 0.0, 0.2, 0.0, 0.1, 0.0]),
            structure: ModelStructure::STATIONARY,
            cov: None,
            first_year: 1950,
            last_year: 1999,
            threshold: 1.0,
            seed: 9,
        };
        let a = simulate_record(&spec).unwrap();
        assert_eq!(a, simulate_record(&spec).unwrap());
        assert_ne!(a, simulate_record(&SimulationSpec { seed: 10, ..spec.clone() }).unwrap());
        a.validate(3).unwrap();
    }

    #[test]
    fn invalid_spec_rejected_before_sampling() {
        let ns1 = ModelStructure::nonstationary(NonstationarityLevel::Ns1, CovariateKind::Time).unwrap();
        let cov = CovariateSeries { kind: CovariateKind::Time, first_year: 2000, values: vec![0.0, 1.0], historical_range: (2000, 2001) };
        let spec = SimulationSpec {
            theta: ParameterVector([0.01, -0.02, 0.2, 0.0, 0.1, 0.0]),
            structure: ns1,
            cov: Some(cov),
            first_year: 2000,
            last_year: 2001,
            threshold: 1.0,
            seed: 0,
        };
        assert!(matches!(simulate_record(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn tiny_rate_gives_no_exceedances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let total: usize = (0..1000).map(|_| simulate_year(1e-12, 0.2, 0.1, 1.0, 365.0, &mut rng).len()).sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn bounded_shape_stays_below_endpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (sigma, xi, mu) = (0.3, -0.3, 1.0);
        let theta = ParameterVector([0.05, 0.0, sigma, 0.0, xi, 0.0]);
        let z = empirical_return_level(&theta, NonstationarityLevel::St, 0.0, mu, 20.0, 4000, &mut rng).unwrap();
        assert!(z < mu - sigma / xi);
    }
}
