//! Maximum-likelihood fits by restarted simplex search.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariates::CovariateSeries;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{ModelData, ModelStructure, Param, ParameterVector, Posterior};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::preprocess::ExceedanceSet;

pub const RANDOM_RESTARTS: usize = 5;
const MAX_POLISH_ROUNDS: usize = 8;
const START_SHAPE: f64 = 0.05;

/// Moment-based starting point: overall exceedance rate, sample SD of the
/// excesses (log of it for log-scale structures), a small positive shape
/// and zero slopes.
pub fn moment_start(structure: ModelStructure, data: &ModelData) -> ParameterVector {
    let days = data.total_days().max(1.0);
    let lambda0 = (data.total_count() as f64).max(0.5) / days;
    let excesses: Vec<f64> = data.excesses().collect();
    let sd = if excesses.len() >= 2 {
        math::sqrt(math::sample_variance(&excesses))
    } else {
        0.1
    };
    let sd = if sd > 0.0 { sd } else { 0.1 };
    let mut theta = ParameterVector::default();
    theta.set(Param::Lambda0, lambda0);
    theta.set(Param::Sigma0, if structure.level().log_scale() { math::ln(sd) } else { sd });
    theta.set(Param::Xi0, START_SHAPE);
    theta
}

fn simplex_steps(structure: ModelStructure, start: &ParameterVector) -> Vec<f64> {
    let lambda0 = start.get(Param::Lambda0).abs().max(1e-6);
    structure
        .level()
        .active_params()
        .iter()
        .map(|p| match p {
            Param::Lambda0 | Param::Lambda1 => 0.2 * lambda0,
            Param::Sigma0 if !structure.level().log_scale() => 0.2 * start.get(Param::Sigma0).abs().max(1e-3),
            Param::Sigma0 | Param::Sigma1 => 0.2,
            Param::Xi0 | Param::Xi1 => 0.1,
        })
        .collect()
}

fn perturb<R: Rng + ?Sized>(structure: ModelStructure, start: &ParameterVector, rng: &mut R) -> ParameterVector {
    let mut z = || -> f64 { StandardNormal.sample(rng) };
    let mut theta = *start;
    let lambda0 = start.get(Param::Lambda0);
    for p in structure.level().active_params() {
        let v = match p {
            Param::Lambda0 => lambda0 * math::exp(0.3 * z()),
            Param::Lambda1 => 0.3 * lambda0 * z(),
            Param::Sigma0 if !structure.level().log_scale() => start.get(*p) * math::exp(0.3 * z()),
            Param::Sigma0 => start.get(*p) + 0.3 * z(),
            Param::Sigma1 => 0.3 * z(),
            Param::Xi0 => START_SHAPE + 0.1 * z(),
            Param::Xi1 => 0.1 * z(),
        };
        theta.set(*p, v);
    }
    theta
}

/// Runs the simplex from `start` repeatedly until a restart no longer
/// improves the optimum.
fn polish<F>(structure: ModelStructure, objective: &F, start: &ParameterVector) -> (ParameterVector, f64)
where
    F: Fn(&ParameterVector) -> f64,
{
    let level = structure.level();
    let negated = |x: &[f64]| -objective(&ParameterVector::from_active(level, x));
    let options = NelderMeadOptions::default();
    let mut best = start.active(level);
    let mut best_value = negated(&best);
    for _ in 0..MAX_POLISH_ROUNDS {
        let steps = simplex_steps(structure, &ParameterVector::from_active(level, &best));
        let m = nelder_mead(negated, &best, &steps, &options);
        let improved = best_value - m.value;
        if m.value < best_value {
            best = m.x;
            best_value = m.value;
        }
        if !(improved > 1e-10) {
            break;
        }
    }
    (ParameterVector::from_active(level, &best), -best_value)
}

/// Maximizes `objective` from the moment start and [`RANDOM_RESTARTS`]
/// randomly perturbed starts, keeping the best.
fn maximize<F, R>(structure: ModelStructure, data: &ModelData, objective: F, rng: &mut R) -> Result<ParameterVector>
where
    F: Fn(&ParameterVector) -> f64,
    R: Rng + ?Sized,
{
    let level = structure.level();
    let objective = |t: &ParameterVector| if t.in_domain(level) { objective(t) } else { f64::NEG_INFINITY };
    let base = moment_start(structure, data);
    let mut best: Option<(ParameterVector, f64)> = None;
    for attempt in 0..=RANDOM_RESTARTS {
        let mut start = base;
        if attempt > 0 {
            // a few tries to land a feasible perturbation
            for _ in 0..20 {
                start = perturb(structure, &base, rng);
                if objective(&start).is_finite() {
                    break;
                }
            }
        }
        if !objective(&start).is_finite() {
            continue;
        }
        let (theta, value) = polish(structure, &objective, &start);
        if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((theta, value));
        }
    }
    best.map(|(theta, _)| theta).ok_or(Error::NoFeasibleStart)
}

/// Maximum-likelihood estimate for `structure`.
pub fn mle_fit_prepared<R: Rng + ?Sized>(
    structure: ModelStructure,
    data: &ModelData,
    rng: &mut R,
) -> Result<ParameterVector> {
    let level = structure.level();
    maximize(structure, data, |t| data.log_likelihood(t, level), rng)
}

/// Posterior mode, found with the same restarted simplex search.
pub fn map_fit<R: Rng + ?Sized>(posterior: &Posterior, rng: &mut R) -> Result<ParameterVector> {
    let structure = posterior.structure();
    let level = structure.level();
    maximize(structure, posterior.data(), |t| posterior.log_density(&t.active(level)), rng)
}

pub fn mle_fit<R: Rng + ?Sized>(
    structure: ModelStructure,
    data: &ExceedanceSet,
    cov: Option<&CovariateSeries>,
    rng: &mut R,
) -> Result<ParameterVector> {
    if data.years.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cov = structure.covariate().and(cov);
    if structure.covariate().is_some() && cov.is_none() {
        return Err(Error::InvalidArgument(alloc::format!("{structure} needs a covariate series")));
    }
    mle_fit_prepared(structure, &ModelData::new(data, cov)?, rng)
}
