//! The 13 PP/GPD model structures and their log-likelihood, log-prior and
//! log-posterior.
//!
//! Exceedance counts in year `y` are Poisson with rate `λ(y)` per day over
//! the year's observed duration; exceedance heights above the threshold `μ`
//! are generalized Pareto with scale `σ(y)` and shape `ξ(y)`. Each of the
//! three parameters may vary linearly (or log-linearly for `σ`) with an
//! annual covariate `φ(y)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::covariates::{CovariateKind, CovariateSeries};
use crate::error::{Error, Result};
use crate::math;
use crate::preprocess::ExceedanceSet;
use crate::priors::PriorSet;

/// Below this magnitude the shape parameter takes the exponential limit.
pub const XI_ZERO_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NonstationarityLevel {
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "NS1")]
    Ns1,
    #[serde(rename = "NS2")]
    Ns2,
    #[serde(rename = "NS3")]
    Ns3,
}

impl NonstationarityLevel {
    pub const ALL: [NonstationarityLevel; 4] = [
        NonstationarityLevel::St,
        NonstationarityLevel::Ns1,
        NonstationarityLevel::Ns2,
        NonstationarityLevel::Ns3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NonstationarityLevel::St => "ST",
            NonstationarityLevel::Ns1 => "NS1",
            NonstationarityLevel::Ns2 => "NS2",
            NonstationarityLevel::Ns3 => "NS3",
        }
    }

    pub fn active_params(self) -> &'static [Param] {
        use Param::*;
        match self {
            NonstationarityLevel::St => &[Lambda0, Sigma0, Xi0],
            NonstationarityLevel::Ns1 => &[Lambda0, Lambda1, Sigma0, Xi0],
            NonstationarityLevel::Ns2 => &[Lambda0, Lambda1, Sigma0, Sigma1, Xi0],
            NonstationarityLevel::Ns3 => &[Lambda0, Lambda1, Sigma0, Sigma1, Xi0, Xi1],
        }
    }

    pub fn dim(self) -> usize {
        self.active_params().len()
    }

    /// Whether `σ₀` is the log-scale intercept rather than a direct scale.
    pub fn log_scale(self) -> bool {
        matches!(self, NonstationarityLevel::Ns2 | NonstationarityLevel::Ns3)
    }
}

impl fmt::Display for NonstationarityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the 13 candidate structures. The stationary model is shared by
/// all covariates and carries none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelStructure {
    level: NonstationarityLevel,
    covariate: Option<CovariateKind>,
}

impl ModelStructure {
    pub const STATIONARY: ModelStructure = ModelStructure { level: NonstationarityLevel::St, covariate: None };

    pub fn nonstationary(level: NonstationarityLevel, covariate: CovariateKind) -> Result<Self> {
        if level == NonstationarityLevel::St {
            return Err(Error::InvalidArgument("ST carries no covariate".into()));
        }
        Ok(Self { level, covariate: Some(covariate) })
    }

    /// All 13 structures: ST first, then NS1..NS3 for each covariate.
    pub fn all() -> Vec<ModelStructure> {
        let mut out = alloc::vec![ModelStructure::STATIONARY];
        for kind in CovariateKind::ALL {
            for level in &NonstationarityLevel::ALL[1..] {
                out.push(ModelStructure { level: *level, covariate: Some(kind) });
            }
        }
        out
    }

    /// ST plus the three nonstationary structures of one covariate.
    pub fn for_covariate(kind: CovariateKind) -> [ModelStructure; 4] {
        NonstationarityLevel::ALL.map(|level| match level {
            NonstationarityLevel::St => ModelStructure::STATIONARY,
            _ => ModelStructure { level, covariate: Some(kind) },
        })
    }

    pub fn level(&self) -> NonstationarityLevel {
        self.level
    }

    pub fn covariate(&self) -> Option<CovariateKind> {
        self.covariate
    }

    pub fn dim(&self) -> usize {
        self.level.dim()
    }

    pub fn id(&self) -> String {
        match self.covariate {
            None => String::from("ST"),
            Some(k) => alloc::format!("{}-{}", self.level, k),
        }
    }
}

impl fmt::Display for ModelStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for ModelStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelStructure::all()
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown model structure `{s}`")))
    }
}

impl Serialize for ModelStructure {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for ModelStructure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Lambda0,
    Lambda1,
    Sigma0,
    Sigma1,
    Xi0,
    Xi1,
}

impl Param {
    pub const ALL: [Param; 6] = [
        Param::Lambda0,
        Param::Lambda1,
        Param::Sigma0,
        Param::Sigma1,
        Param::Xi0,
        Param::Xi1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Lambda0 => "lambda0",
            Param::Lambda1 => "lambda1",
            Param::Sigma0 => "sigma0",
            Param::Sigma1 => "sigma1",
            Param::Xi0 => "xi0",
            Param::Xi1 => "xi1",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown parameter `{s}`")))
    }
}

/// `(λ₀, λ₁, σ₀, σ₁, ξ₀, ξ₁)`; inactive entries stay at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterVector(pub [f64; 6]);

impl ParameterVector {
    pub fn get(&self, p: Param) -> f64 {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Param, value: f64) {
        self.0[p.index()] = value;
    }

    pub fn active(&self, level: NonstationarityLevel) -> Vec<f64> {
        level.active_params().iter().map(|p| self.get(*p)).collect()
    }

    pub fn from_active(level: NonstationarityLevel, values: &[f64]) -> Self {
        let mut theta = ParameterVector::default();
        for (p, v) in level.active_params().iter().zip(values) {
            theta.set(*p, *v);
        }
        theta
    }

    /// `λ₀ > 0`, and `σ₀ > 0` where it is a direct scale.
    pub fn in_domain(&self, level: NonstationarityLevel) -> bool {
        self.get(Param::Lambda0) > 0.0 && (level.log_scale() || self.get(Param::Sigma0) > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams {
    /// Exceedances per day.
    pub lambda: f64,
    pub sigma: f64,
    pub xi: f64,
}

pub fn params_at(theta: &ParameterVector, level: NonstationarityLevel, phi: f64) -> EffectiveParams {
    use Param::*;
    let t = |p| theta.get(p);
    let lambda = match level {
        NonstationarityLevel::St => t(Lambda0),
        _ => t(Lambda0) + t(Lambda1) * phi,
    };
    let sigma = match level {
        NonstationarityLevel::St | NonstationarityLevel::Ns1 => t(Sigma0),
        _ => math::exp(t(Sigma0) + t(Sigma1) * phi),
    };
    let xi = match level {
        NonstationarityLevel::Ns3 => t(Xi0) + t(Xi1) * phi,
        _ => t(Xi0),
    };
    EffectiveParams { lambda, sigma, xi }
}

/// Log GPD density of an excess `x - μ ≥ 0`; `-∞` beyond a bounded
/// upper endpoint. Caller guarantees `sigma > 0`.
#[inline]
fn gpd_logpdf_excess(excess: f64, sigma: f64, xi: f64) -> f64 {
    let z = excess / sigma;
    if xi.abs() < XI_ZERO_CUTOFF {
        return -math::ln(sigma) - z;
    }
    let arg = xi * z;
    if arg <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -math::ln(sigma) - (1.0 + 1.0 / xi) * math::ln_1p(arg)
}

/// Log generalized Pareto density at `x` for threshold `mu`.
pub fn gpd_logpdf(x: f64, mu: f64, sigma: f64, xi: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(x >= mu) || !xi.is_finite() || !x.is_finite() {
        return Err(Error::OutsideSupport);
    }
    Ok(gpd_logpdf_excess(x - mu, sigma, xi))
}

/// Log Poisson probability of `n` events at `lambda` per day over
/// `duration_days`; `-∞` for a nonpositive rate or duration.
pub fn poisson_logpmf(n: usize, lambda: f64, duration_days: f64) -> f64 {
    let mean = lambda * duration_days;
    if !(lambda > 0.0) || !(duration_days > 0.0) {
        return f64::NEG_INFINITY;
    }
    if n == 0 {
        return -mean;
    }
    n as f64 * math::ln(mean) - mean - math::ln_gamma(n as f64 + 1.0)
}

#[derive(Debug, Clone)]
struct YearTerm {
    phi: f64,
    count: usize,
    duration_days: f64,
    ln_count_factorial: f64,
    excesses: Vec<f64>,
}

/// Exceedance data bound to the covariate values of its years, ready for
/// repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct ModelData {
    threshold: f64,
    years: Vec<YearTerm>,
}

impl ModelData {
    /// With `cov = None` every year gets `φ = 0` (only meaningful for ST).
    pub fn new(data: &ExceedanceSet, cov: Option<&CovariateSeries>) -> Result<Self> {
        let years = data
            .years
            .iter()
            .map(|block| {
                let phi = match cov {
                    Some(c) => c.value_for_year(block.year)?,
                    None => 0.0,
                };
                Ok(YearTerm {
                    phi,
                    count: block.count,
                    duration_days: block.duration_days,
                    ln_count_factorial: math::ln_gamma(block.count as f64 + 1.0),
                    excesses: block.records.iter().map(|r| r.height - data.threshold).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if years.iter().flat_map(|y| &y.excesses).any(|e| !(*e >= 0.0)) {
            return Err(Error::OutsideSupport);
        }
        Ok(Self { threshold: data.threshold, years })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn total_count(&self) -> usize {
        self.years.iter().map(|y| y.count).sum()
    }

    pub fn total_days(&self) -> f64 {
        self.years.iter().map(|y| y.duration_days).sum()
    }

    pub fn excesses(&self) -> impl Iterator<Item = f64> + '_ {
        self.years.iter().flat_map(|y| y.excesses.iter().copied())
    }

    pub fn log_likelihood(&self, theta: &ParameterVector, level: NonstationarityLevel) -> f64 {
        let mut total = 0.0;
        for y in &self.years {
            let p = params_at(theta, level, y.phi);
            if !(p.lambda > 0.0) || !(p.sigma > 0.0) || !p.xi.is_finite() {
                return f64::NEG_INFINITY;
            }
            let mean = p.lambda * y.duration_days;
            total += y.count as f64 * math::ln(mean) - mean - y.ln_count_factorial;
            for &e in &y.excesses {
                total += gpd_logpdf_excess(e, p.sigma, p.xi);
            }
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

/// Joint PP/GPD log-likelihood of the exceedance set. `-∞` when any year
/// has a nonpositive rate or scale, or an exceedance outside GPD support.
pub fn log_likelihood(
    theta: &ParameterVector,
    structure: ModelStructure,
    data: &ExceedanceSet,
    cov: &CovariateSeries,
) -> Result<f64> {
    let cov = structure.covariate().map(|_| cov);
    Ok(ModelData::new(data, cov)?.log_likelihood(theta, structure.level()))
}

pub fn log_prior(theta: &ParameterVector, structure: ModelStructure, priors: &PriorSet) -> Result<f64> {
    let mut total = 0.0;
    for p in structure.level().active_params() {
        let spec = priors.get(*p).ok_or(Error::MissingPrior(p.name()))?;
        total += spec.log_density(theta.get(*p));
    }
    Ok(total)
}

pub fn log_posterior(
    theta: &ParameterVector,
    structure: ModelStructure,
    data: &ExceedanceSet,
    cov: &CovariateSeries,
    priors: &PriorSet,
) -> Result<f64> {
    let lp = log_prior(theta, structure, priors)?;
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + log_likelihood(theta, structure, data, cov)?)
}

/// Unnormalized log-posterior over the active parameters of one structure.
#[derive(Debug, Clone)]
pub struct Posterior {
    structure: ModelStructure,
    data: ModelData,
    priors: PriorSet,
}

impl Posterior {
    pub fn new(
        structure: ModelStructure,
        data: &ExceedanceSet,
        cov: Option<&CovariateSeries>,
        priors: PriorSet,
    ) -> Result<Self> {
        if structure.covariate().is_some() && cov.is_none() {
            return Err(Error::InvalidArgument(alloc::format!("{structure} needs a covariate series")));
        }
        for p in structure.level().active_params() {
            priors.get(*p).ok_or(Error::MissingPrior(p.name()))?;
        }
        let cov = structure.covariate().and(cov);
        Ok(Self { structure, data: ModelData::new(data, cov)?, priors })
    }

    pub fn structure(&self) -> ModelStructure {
        self.structure
    }

    pub fn data(&self) -> &ModelData {
        &self.data
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    /// Log-posterior at the active-parameter vector `active`.
    pub fn log_density(&self, active: &[f64]) -> f64 {
        let level = self.structure.level();
        let mut lp = 0.0;
        for (p, v) in level.active_params().iter().zip(active) {
            lp += self.priors.get(*p).map_or(f64::NEG_INFINITY, |s| s.log_density(*v));
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.data.log_likelihood(&ParameterVector::from_active(level, active), level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ExceedanceRecord, YearBlock};
    use crate::priors::{PriorFamily, PriorSpec};
    use alloc::vec;
    use chrono::NaiveDate;

    #[test]
    fn there_are_thirteen_structures() {
        let all = ModelStructure::all();
        assert_eq!(all.len(), 13);
        for m in &all {
            assert_eq!(m.id().parse::<ModelStructure>().unwrap(), *m);
            assert_eq!(m.covariate().is_none(), m.level() == NonstationarityLevel::St);
        }
        assert!(ModelStructure::nonstationary(NonstationarityLevel::St, CovariateKind::Time).is_err());
    }

    #[test]
    fn effective_params() {
        let theta = ParameterVector([0.01, 0.005, -1.5, 0.2, 0.1, 0.0]);
        assert!((params_at(&theta, NonstationarityLevel::Ns1, 1.0).lambda - 0.015).abs() < 1e-15);
        let p = params_at(&theta, NonstationarityLevel::Ns3, 0.0);
        assert!((p.sigma - 0.22313016014842982).abs() < 1e-15);
        assert_eq!(
            params_at(&theta, NonstationarityLevel::St, 0.0),
            params_at(&theta, NonstationarityLevel::St, 1.0)
        );
    }

    #[test]
    fn gpd_at_threshold_is_inverse_scale() {
        for xi in [-0.4, 0.0, 1e-9, 0.3] {
            assert!((gpd_logpdf(1.0, 1.0, 0.5, xi).unwrap() - math::ln(2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn gpd_beyond_upper_endpoint() {
        assert_eq!(gpd_logpdf(3.0, 0.0, 1.0, -0.5).unwrap(), f64::NEG_INFINITY);
        assert_eq!(gpd_logpdf(-0.1, 0.0, 1.0, 0.1), Err(Error::OutsideSupport));
        assert_eq!(gpd_logpdf(0.1, 0.0, 0.0, 0.1), Err(Error::OutsideSupport));
    }

    #[test]
    fn gpd_continuous_across_zero_shape() {
        for i in 0..50 {
            let x = i as f64 * 0.1;
            let f0 = gpd_logpdf(x, 0.0, 0.7, 0.0).unwrap();
            for xi in [1e-8, -1e-8] {
                assert!((gpd_logpdf(x, 0.0, 0.7, xi).unwrap() - f0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_logpmf(0, 0.02, 100.0), -2.0);
        assert!((poisson_logpmf(1, 1.0, 1.0) + 1.0).abs() < 1e-15);
        assert_eq!(poisson_logpmf(1, 0.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        for mean in [0.1, 1.0, 5.0, 20.0] {
            let s: f64 = (0..200).map(|n| math::exp(poisson_logpmf(n, mean, 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12, "mean {mean}: {s}");
        }
    }

    fn one_year(n: usize, days: f64) -> ExceedanceSet {
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let records = (0..n).map(|i| ExceedanceRecord { date: d + chrono::Days::new(4 * i as u64), height: 1.2 }).collect();
        ExceedanceSet { threshold: 1.0, years: vec![YearBlock::new(2000, records, days)] }
    }

    fn flat_cov() -> CovariateSeries {
        CovariateSeries {
            kind: CovariateKind::Time,
            first_year: 1990,
            values: vec![0.5; 30],
            historical_range: (1990, 2019),
        }
    }

    #[test]
    fn poisson_only_year() {
        let theta = ParameterVector([0.02, 0.0, 0.3, 0.0, 0.1, 0.0]);
        let ll = log_likelihood(&theta, ModelStructure::STATIONARY, &one_year(0, 100.0), &flat_cov()).unwrap();
        assert_eq!(ll, -2.0);
    }

    #[test]
    fn invalid_rate_or_scale_is_neg_infinity() {
        let data = one_year(2, 365.0);
        let cov = flat_cov();
        let st = ModelStructure::STATIONARY;
        assert_eq!(log_likelihood(&ParameterVector([-0.01, 0.0, 0.3, 0.0, 0.1, 0.0]), st, &data, &cov).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_likelihood(&ParameterVector([0.01, 0.0, -0.3, 0.0, 0.1, 0.0]), st, &data, &cov).unwrap(), f64::NEG_INFINITY);
        // excess 0.2 beyond the endpoint σ/|ξ| = 0.1
        assert_eq!(log_likelihood(&ParameterVector([0.01, 0.0, 0.05, 0.0, -0.5, 0.0]), st, &data, &cov).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn coverage_gap_is_an_error() {
        let mut data = one_year(1, 365.0);
        data.years[0].year = 1980;
        data.years[0].records[0].date = NaiveDate::from_ymd_opt(1980, 3, 1).unwrap();
        let ns1 = ModelStructure::nonstationary(NonstationarityLevel::Ns1, CovariateKind::Time).unwrap();
        let theta = ParameterVector([0.01, 0.0, 0.3, 0.0, 0.1, 0.0]);
        assert_eq!(log_likelihood(&theta, ns1, &data, &flat_cov()), Err(Error::CovariateCoverage(1980)));
    }

    #[test]
    fn prior_neg_infinity_dominates() {
        let mut priors = PriorSet::new(ModelStructure::STATIONARY);
        priors.insert(Param::Lambda0, PriorSpec::new(PriorFamily::Gamma, 2.0, 100.0).unwrap());
        priors.insert(Param::Sigma0, PriorSpec::new(PriorFamily::Gamma, 2.0, 5.0).unwrap());
        priors.insert(Param::Xi0, PriorSpec::new(PriorFamily::Normal, 0.0, 0.3).unwrap());
        let theta = ParameterVector([-0.01, 0.0, 0.3, 0.0, 0.1, 0.0]);
        let lp = log_posterior(&theta, ModelStructure::STATIONARY, &one_year(1, 365.0), &flat_cov(), &priors).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        let mut partial = PriorSet::new(ModelStructure::STATIONARY);
        partial.insert(Param::Lambda0, PriorSpec::new(PriorFamily::Gamma, 2.0, 100.0).unwrap());
        assert_eq!(log_prior(&theta, ModelStructure::STATIONARY, &partial), Err(Error::MissingPrior("sigma0")));
    }

    #[test]
    fn flat_prior_posterior_is_likelihood() {
        let s = ModelStructure::STATIONARY;
        let priors = PriorSet::flat(s);
        let data = one_year(3, 365.0);
        let theta = ParameterVector([0.01, 0.0, 0.3, 0.0, 0.1, 0.0]);
        let ll = log_likelihood(&theta, s, &data, &flat_cov()).unwrap();
        assert_eq!(log_posterior(&theta, s, &data, &flat_cov(), &priors).unwrap(), ll);
        let post = Posterior::new(s, &data, None, priors).unwrap();
        assert_eq!(post.log_density(&theta.active(s.level())), ll);
    }
}
