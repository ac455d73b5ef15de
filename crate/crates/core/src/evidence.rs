//! Marginal likelihoods by bridge sampling, and the model weights built on
//! them.
//!
//! The bridge estimator uses half of the posterior ensemble to fit a
//! moment-matched multivariate normal proposal and the other half, together
//! with an equal number of proposal draws, in the optimal-bridge fixed-point
//! iteration.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateKind;
use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::model::{ModelStructure, Posterior};
use crate::sampler::PosteriorEnsemble;

pub const MIN_BRIDGE_DRAWS: usize = 1000;
pub const BRIDGE_TOLERANCE: f64 = 1e-10;
pub const BRIDGE_MAX_ITERATIONS: usize = 1000;
const COVARIANCE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub structure: ModelStructure,
    pub log_evidence: f64,
    /// Approximate Monte-Carlo standard error of `log_evidence`
    /// (ignores autocorrelation among posterior draws).
    pub log_evidence_se: f64,
    pub iterations_used: usize,
    pub relative_change_at_stop: f64,
    pub converged: bool,
}

/// Result of the structure-agnostic bridge estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeResult {
    pub log_evidence: f64,
    pub log_evidence_se: f64,
    pub iterations_used: usize,
    pub relative_change_at_stop: f64,
    pub converged: bool,
}

/// Multivariate normal fitted by moments.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    chol: Matrix,
    log_norm: f64,
}

impl Gaussian {
    pub fn fit(draws: &[Vec<f64>]) -> Result<Self> {
        let d = draws.first().map_or(0, Vec::len);
        let n = draws.len() as f64;
        let mut mean = alloc::vec![0.0; d];
        for x in draws {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut cov = Matrix::zeros(d);
        for x in draws {
            for i in 0..d {
                for j in 0..=i {
                    cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
            cov[(i, i)] += COVARIANCE_JITTER;
        }
        if cov.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ProposalCovariance);
        }
        let chol = cov.cholesky().ok_or(Error::ProposalCovariance)?;
        let log_det: f64 = (0..d).map(|i| math::ln(chol[(i, i)])).sum();
        let log_norm = -0.5 * d as f64 * math::ln(2.0 * core::f64::consts::PI) - log_det;
        Ok(Self { mean, chol, log_norm })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = self.chol.forward_solve(&centered);
        self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        self.chol
            .lower_mul(&u)
            .into_iter()
            .zip(&self.mean)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Bridge-sampling estimate of `log ∫ exp(log_density)`. `draws` must be
/// (approximately) independent samples from the normalized density, in
/// random order.
pub fn bridge_log_evidence<F, R>(draws: &[Vec<f64>], log_density: F, rng: &mut R) -> Result<BridgeResult>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if draws.len() < MIN_BRIDGE_DRAWS {
        return Err(Error::InsufficientData(alloc::format!(
            "{} posterior draws, need at least {MIN_BRIDGE_DRAWS}",
            draws.len()
        )));
    }
    let half = draws.len() / 2;
    let proposal = Gaussian::fit(&draws[..half])?;
    let posterior_half = &draws[half..];
    let n1 = posterior_half.len();
    let n2 = n1;

    // log(q / g) at posterior draws and at proposal draws
    let l1: Vec<f64> = posterior_half
        .iter()
        .map(|x| log_density(x) - proposal.log_density(x))
        .collect();
    let l2: Vec<f64> = (0..n2)
        .map(|_| {
            let x = proposal.sample(rng);
            log_density(&x) - proposal.log_density(&x)
        })
        .collect();
    if l1.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("posterior draw with non-finite log density".into()));
    }

    let shift = math::quantile(&l1, 0.5);
    let e1: Vec<f64> = l1.iter().map(|v| math::exp(v - shift)).collect();
    let e2: Vec<f64> = l2
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { math::exp(v - shift) })
        .collect();
    let total = (n1 + n2) as f64;
    let (s1, s2) = (n1 as f64 / total, n2 as f64 / total);

    let update = |r: f64| -> f64 {
        let num = e2.iter().map(|e| e / (s1 * e + s2 * r)).sum::<f64>() / n2 as f64;
        let den = e1.iter().map(|e| 1.0 / (s1 * e + s2 * r)).sum::<f64>() / n1 as f64;
        num / den
    };

    let mut r = 1.0;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < BRIDGE_MAX_ITERATIONS {
        let next = update(r);
        iterations += 1;
        if !(next > 0.0) || !next.is_finite() {
            return Err(Error::InvalidArgument("bridge iteration diverged".into()));
        }
        change = ((next - r) / next).abs();
        r = next;
        if change < BRIDGE_TOLERANCE {
            break;
        }
    }

    // relative mean-squared error of the estimate
    let f1: Vec<f64> = e2.iter().map(|e| e / (s1 * e + s2 * r)).collect();
    let f2: Vec<f64> = e1.iter().map(|e| 1.0 / (s1 * e + s2 * r)).collect();
    let rel = |v: &[f64]| {
        let m = math::mean(v);
        math::sample_variance(v) / (m * m)
    };
    let re2 = rel(&f1) / n2 as f64 + rel(&f2) / n1 as f64;

    Ok(BridgeResult {
        log_evidence: math::ln(r) + shift,
        log_evidence_se: math::sqrt(re2),
        iterations_used: iterations,
        relative_change_at_stop: change,
        converged: change < BRIDGE_TOLERANCE,
    })
}

/// Log marginal likelihood of `posterior`'s structure from its ensemble.
pub fn bridge_evidence<R: Rng + ?Sized>(
    ensemble: &PosteriorEnsemble,
    posterior: &Posterior,
    rng: &mut R,
) -> Result<EvidenceEstimate> {
    if ensemble.structure != posterior.structure() {
        return Err(Error::StructureMismatch);
    }
    let b = bridge_log_evidence(&ensemble.active_draws(), |x| posterior.log_density(x), rng)?;
    Ok(EvidenceEstimate {
        structure: ensemble.structure,
        log_evidence: b.log_evidence,
        log_evidence_se: b.log_evidence_se,
        iterations_used: b.iterations_used,
        relative_change_at_stop: b.relative_change_at_stop,
        converged: b.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaWeights {
    pub weights: Vec<(ModelStructure, f64)>,
}

impl BmaWeights {
    pub fn get(&self, structure: ModelStructure) -> Option<f64> {
        self.weights.iter().find(|(s, _)| *s == structure).map(|(_, w)| *w)
    }

    pub fn structures(&self) -> impl Iterator<Item = ModelStructure> + '_ {
        self.weights.iter().map(|(s, _)| *s)
    }
}

/// Posterior model probabilities under a uniform model prior.
pub fn bma_weights(evidences: &[EvidenceEstimate]) -> Result<BmaWeights> {
    let uniform = alloc::vec![1.0; evidences.len()];
    bma_weights_with_prior(evidences, &uniform)
}

/// Posterior model probabilities for an arbitrary (unnormalized) prior.
pub fn bma_weights_with_prior(evidences: &[EvidenceEstimate], model_prior: &[f64]) -> Result<BmaWeights> {
    if evidences.is_empty() {
        return Err(Error::EmptyInput);
    }
    if model_prior.len() != evidences.len() || model_prior.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("model prior must be positive, one entry per model".into()));
    }
    if let Some(e) = evidences.iter().find(|e| !e.log_evidence.is_finite()) {
        return Err(Error::NonFiniteEvidence(e.structure));
    }
    let logs: Vec<f64> = evidences
        .iter()
        .zip(model_prior)
        .map(|(e, p)| e.log_evidence + math::ln(*p))
        .collect();
    let norm = math::log_sum_exp(&logs);
    Ok(BmaWeights {
        weights: evidences
            .iter()
            .zip(&logs)
            .map(|(e, l)| (e.structure, math::exp(l - norm)))
            .collect(),
    })
}

/// ST or one covariate's nonstationary family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGroup {
    Covariate(CovariateKind),
    Stationary,
}

impl WeightGroup {
    pub const ORDER: [WeightGroup; 5] = [
        WeightGroup::Covariate(CovariateKind::Time),
        WeightGroup::Covariate(CovariateKind::Temperature),
        WeightGroup::Covariate(CovariateKind::SeaLevel),
        WeightGroup::Covariate(CovariateKind::NaoIndex),
        WeightGroup::Stationary,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            WeightGroup::Covariate(k) => k.as_str(),
            WeightGroup::Stationary => "ST",
        }
    }
}

/// Sums NS1+NS2+NS3 weights per covariate; ST reported alone. Requires all
/// 13 structures.
pub fn aggregate_by_covariate(weights: &BmaWeights) -> Result<Vec<(WeightGroup, f64)>> {
    let mut all = ModelStructure::all();
    let mut have: Vec<ModelStructure> = weights.structures().collect();
    all.sort();
    have.sort();
    if all != have {
        return Err(Error::IncompleteStructureSet);
    }
    Ok(WeightGroup::ORDER
        .iter()
        .map(|g| {
            let total = weights
                .weights
                .iter()
                .filter(|(s, _)| match g {
                    WeightGroup::Stationary => s.covariate().is_none(),
                    WeightGroup::Covariate(k) => s.covariate() == Some(*k),
                })
                .map(|(_, w)| w)
                .sum();
            (*g, total)
        })
        .collect())
}

/// BMA over ST and the three nonstationary structures of one covariate.
pub fn covariate_weights(evidences: &[EvidenceEstimate], kind: CovariateKind) -> Result<BmaWeights> {
    let wanted = ModelStructure::for_covariate(kind);
    let subset: Vec<EvidenceEstimate> = wanted
        .iter()
        .map(|s| {
            evidences
                .iter()
                .find(|e| e.structure == *s)
                .cloned()
                .ok_or(Error::IncompleteStructureSet)
        })
        .collect::<Result<_>>()?;
    bma_weights(&subset)
}
