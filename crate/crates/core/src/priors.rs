//! Normal and gamma priors distilled from multi-station maximum-likelihood
//! estimates.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{ModelStructure, Param, ParameterVector};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    /// `p1` = mean, `p2` = standard deviation.
    Normal,
    /// `p1` = shape, `p2` = rate.
    Gamma,
    /// Improper constant density; `p1`, `p2` unused. Sensitivity runs only.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: PriorFamily,
    pub p1: f64,
    pub p2: f64,
}

impl PriorSpec {
    pub fn new(family: PriorFamily, p1: f64, p2: f64) -> Result<Self> {
        let ok = match family {
            PriorFamily::Normal => p1.is_finite() && p2 > 0.0 && p2.is_finite(),
            PriorFamily::Gamma => p1 > 0.0 && p2 > 0.0 && p1.is_finite() && p2.is_finite(),
            PriorFamily::Flat => true,
        };
        if !ok {
            return Err(Error::InvalidArgument(alloc::format!(
                "invalid {family:?} prior parameters ({p1}, {p2})"
            )));
        }
        Ok(Self { family, p1, p2 })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match self.family {
            PriorFamily::Normal => {
                let z = (x - self.p1) / self.p2;
                -LN_SQRT_2PI - math::ln(self.p2) - 0.5 * z * z
            }
            PriorFamily::Gamma => {
                if !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let (k, r) = (self.p1, self.p2);
                k * math::ln(r) - math::ln_gamma(k) + (k - 1.0) * math::ln(x) - r * x
            }
            PriorFamily::Flat => 0.0,
        }
    }

    /// Location of the density maximum (gamma with shape < 1 peaks at 0).
    pub fn mode(&self) -> f64 {
        match self.family {
            PriorFamily::Normal => self.p1,
            PriorFamily::Gamma => ((self.p1 - 1.0) / self.p2).max(0.0),
            PriorFamily::Flat => 0.0,
        }
    }
}

/// Per-parameter priors for one model structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub structure: ModelStructure,
    pub params: BTreeMap<Param, PriorSpec>,
}

impl PriorSet {
    pub fn new(structure: ModelStructure) -> Self {
        Self { structure, params: BTreeMap::new() }
    }

    /// Improper flat priors on every active parameter.
    pub fn flat(structure: ModelStructure) -> Self {
        let mut set = Self::new(structure);
        for p in structure.level().active_params() {
            set.insert(*p, PriorSpec { family: PriorFamily::Flat, p1: 0.0, p2: 0.0 });
        }
        set
    }

    pub fn insert(&mut self, param: Param, spec: PriorSpec) {
        self.params.insert(param, spec);
    }

    pub fn get(&self, param: Param) -> Option<&PriorSpec> {
        self.params.get(&param)
    }
}

/// Family dictated by the parameter's support: gamma for the rate intercept
/// and a direct scale, normal for everything real-valued.
pub fn support_family(structure: ModelStructure, param: Param) -> PriorFamily {
    match param {
        Param::Lambda0 => PriorFamily::Gamma,
        Param::Sigma0 if !structure.level().log_scale() => PriorFamily::Gamma,
        _ => PriorFamily::Normal,
    }
}

/// Moment fit: sample mean/SD for normal, `shape = m²/v`, `rate = m/v` for
/// gamma (unbiased sample variance in both).
pub fn fit_prior(samples: &[f64], family: PriorFamily) -> Result<PriorSpec> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData(alloc::format!(
            "{} samples, need at least 3",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite prior sample".into()));
    }
    let m = math::mean(samples);
    let v = math::sample_variance(samples);
    if !(v > 0.0) {
        return Err(Error::DegeneratePrior);
    }
    match family {
        PriorFamily::Normal => PriorSpec::new(family, m, math::sqrt(v)),
        PriorFamily::Gamma => {
            if samples.iter().any(|s| *s <= 0.0) {
                return Err(Error::GammaSupport);
            }
            PriorSpec::new(family, m * m / v, m / v)
        }
        PriorFamily::Flat => Ok(PriorSpec { family, p1: 0.0, p2: 0.0 }),
    }
}

/// Fits one prior per active parameter of `structure` from the MLE vectors
/// of many stations.
pub fn elicit_priors(structure: ModelStructure, mles: &[ParameterVector]) -> Result<PriorSet> {
    let mut set = PriorSet::new(structure);
    for p in structure.level().active_params() {
        let samples: Vec<f64> = mles.iter().map(|m| m.get(*p)).collect();
        set.insert(*p, fit_prior(&samples, support_family(structure, *p))?);
    }
    Ok(set)
}
