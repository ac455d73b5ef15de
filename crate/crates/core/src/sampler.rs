//! Robust adaptive Metropolis (RAM) chains, Gelman-Rubin diagnostics, and
//! pooling of post-burn-in iterates into a thinned posterior ensemble.
//!
//! The proposal is `θ + S u` with `u ~ N(0, I)`. After every step the
//! lower-triangular factor `S` is adapted so that
//! `S' S'ᵀ = S (I + η (α - α*) u uᵀ / |u|²) Sᵀ`, which drives the acceptance
//! rate towards `α*`. The update is a rank-one Cholesky update or downdate.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::model::{ModelStructure, Param, ParameterVector};

pub const TARGET_ACCEPTANCE: f64 = 0.234;
pub const ADAPTATION_DECAY: f64 = 0.66;
pub const PSRF_GATE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub n_chains: usize,
    pub target_acceptance: f64,
    pub adaptation_decay: f64,
    pub seed: u64,
    pub burn_in: usize,
    pub thinned_size: usize,
    pub psrf_gate: f64,
}

impl ChainConfig {
    /// 10k iterations × 4 chains, 1k thinned draws.
    pub fn desk_scale(seed: u64) -> Self {
        Self::with_size(10_000, 4, 1_000, seed)
    }

    /// 100k iterations × 10 chains, 10k thinned draws.
    pub fn paper_scale(seed: u64) -> Self {
        Self::with_size(100_000, 10, 10_000, seed)
    }

    /// Burn-in fixed at 10% of the iterations.
    pub fn with_size(n_iterations: usize, n_chains: usize, thinned_size: usize, seed: u64) -> Self {
        Self {
            n_iterations,
            n_chains,
            target_acceptance: TARGET_ACCEPTANCE,
            adaptation_decay: ADAPTATION_DECAY,
            seed,
            burn_in: n_iterations / 10,
            thinned_size,
            psrf_gate: PSRF_GATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_iterations == 0 || self.n_chains == 0 {
            return bad("n_iterations and n_chains must be positive");
        }
        if self.burn_in >= self.n_iterations {
            return bad("burn_in must be smaller than n_iterations");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target_acceptance must lie in (0, 1)");
        }
        if !(self.adaptation_decay > 0.5 && self.adaptation_decay <= 1.0) {
            return bad("adaptation_decay must lie in (0.5, 1]");
        }
        if self.thinned_size == 0 || self.thinned_size > self.n_chains * (self.n_iterations - self.burn_in) {
            return bad("thinned_size must be positive and no larger than the post-burn-in pool");
        }
        Ok(())
    }
}

/// Per-chain RNG: the global seed selects the key, the chain index the stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Default initial proposal factor: diagonal `0.1 · max(|θᵢ|, 0.1)`.
pub fn initial_factor(init: &[f64]) -> Matrix {
    let diag: Vec<f64> = init.iter().map(|v| 0.1 * v.abs().max(0.1)).collect();
    Matrix::diagonal(&diag)
}

/// Current position of a chain and its log target density.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
}

impl ChainState {
    pub fn new<F: Fn(&[f64]) -> f64>(position: Vec<f64>, target: &F) -> Self {
        let log_density = target(&position);
        Self { position, log_density }
    }
}

/// Adaptive proposal of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Ram {
    pub factor: Matrix,
    /// Steps taken so far; the next step uses `iteration + 1` in `η_n`.
    pub iteration: usize,
    pub target_acceptance: f64,
    pub decay: f64,
    pub adapt: bool,
}

impl Ram {
    pub fn new(factor: Matrix, target_acceptance: f64, decay: f64) -> Self {
        Self { factor, iteration: 0, target_acceptance, decay, adapt: true }
    }

    /// Adaptation step size `η_n = min(1, d · n^(-γ))`.
    pub fn step_size(&self, n: usize) -> f64 {
        (self.factor.dim as f64 * math::powf(n as f64, -self.decay)).min(1.0)
    }

    /// One Metropolis step followed by adaptation. Returns whether the
    /// proposal was accepted.
    pub fn step<F, R>(&mut self, state: &mut ChainState, target: &F, rng: &mut R) -> bool
    where
        F: Fn(&[f64]) -> f64,
        R: Rng + ?Sized,
    {
        let d = self.factor.dim;
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let su = self.factor.lower_mul(&u);
        let proposal: Vec<f64> = state.position.iter().zip(&su).map(|(x, s)| x + s).collect();
        let proposed = target(&proposal);
        let alpha = if proposed.is_finite() {
            math::exp((proposed - state.log_density).min(0.0))
        } else {
            0.0
        };
        let accepted = alpha >= 1.0 || rng.random::<f64>() < alpha;
        if accepted {
            state.position = proposal;
            state.log_density = proposed;
        }
        self.iteration += 1;
        if self.adapt {
            let eta = self.step_size(self.iteration);
            adapt_factor(&mut self.factor, &u, &su, alpha, eta, self.target_acceptance);
        }
        accepted
    }
}

/// Coerces `S` towards the target acceptance. `su` must equal `S u`.
/// Leaves `S` untouched when `α = α*` or when a downdate would break
/// positive definiteness.
pub fn adapt_factor(factor: &mut Matrix, u: &[f64], su: &[f64], alpha: f64, eta: f64, target: f64) {
    let coef = eta * (alpha - target);
    let norm2: f64 = u.iter().map(|v| v * v).sum();
    if coef == 0.0 || !(norm2 > 0.0) {
        return;
    }
    let scale = math::sqrt(coef.abs() / norm2);
    let x: Vec<f64> = su.iter().map(|v| v * scale).collect();
    factor.cholesky_rank_one(&x, coef < 0.0);
}

/// Draws of one chain, row-major `n_iterations × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub dim: usize,
    pub draws: Vec<f64>,
    pub accepted: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize, skip: usize) -> Vec<f64> {
        (skip..self.len()).map(|i| self.draws[i * self.dim + j]).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.len().max(1) as f64
    }
}

/// Runs chain number `chain` of `config` from `init`.
pub fn run_chain<F>(target: &F, init: &[f64], factor: &Matrix, config: &ChainConfig, chain: usize) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    let mut state = ChainState::new(init.to_vec(), target);
    if !state.log_density.is_finite() {
        return Err(Error::InvalidArgument("initial point has non-finite log density".into()));
    }
    let mut rng = chain_rng(config.seed, chain);
    let mut ram = Ram::new(factor.clone(), config.target_acceptance, config.adaptation_decay);
    let dim = init.len();
    let mut draws = Vec::with_capacity(config.n_iterations * dim);
    let mut accepted = 0;
    for _ in 0..config.n_iterations {
        if ram.step(&mut state, target, &mut rng) {
            accepted += 1;
        }
        draws.extend_from_slice(&state.position);
    }
    Ok(Chain { dim, draws, accepted })
}

/// All chains of `config`, sequentially. Chain `k` is identical to
/// `run_chain(.., k)`, so callers may also run them in parallel.
pub fn run_chains<F>(target: &F, init: &[f64], config: &ChainConfig) -> Result<Vec<Chain>>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    let factor = initial_factor(init);
    (0..config.n_chains)
        .map(|k| run_chain(target, init, &factor, config, k))
        .collect()
}

/// Potential scale reduction factor of one scalar quantity across chains.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::InsufficientData("need at least 10 post-burn-in draws".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| math::mean(&c[..n])).collect();
    let within = chains.iter().map(|c| math::sample_variance(&c[..n])).sum::<f64>() / chains.len() as f64;
    if !(within > 0.0) {
        return Err(Error::DegenerateChains(0));
    }
    let between_over_n = math::sample_variance(&means);
    let nf = n as f64;
    Ok(math::sqrt(((nf - 1.0) / nf * within + between_over_n) / within))
}

/// PSRF for every parameter over the post-burn-in segments.
pub fn gelman_rubin(chains: &[Chain], burn_in: usize) -> Result<Vec<f64>> {
    let dim = chains.first().map_or(0, |c| c.dim);
    (0..dim)
        .map(|j| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j, burn_in)).collect();
            psrf(&cols).map_err(|e| match e {
                Error::DegenerateChains(_) => Error::DegenerateChains(j),
                e => e,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub psrf: Vec<(Param, f64)>,
    pub acceptance: Vec<f64>,
    pub gate: f64,
    pub gate_passed: bool,
    /// Set when the gate failed and pooling was forced anyway.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub structure: ModelStructure,
    pub draws: Vec<ParameterVector>,
    pub diagnostics: Diagnostics,
}

impl PosteriorEnsemble {
    pub fn active_draws(&self) -> Vec<Vec<f64>> {
        let level = self.structure.level();
        self.draws.iter().map(|d| d.active(level)).collect()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Pools the post-burn-in iterates of all chains and keeps a uniform sample
/// of `thinned_size` of them, drawn without replacement.
pub fn pool_and_thin<R: Rng + ?Sized>(
    structure: ModelStructure,
    chains: &[Chain],
    config: &ChainConfig,
    force: bool,
    rng: &mut R,
) -> Result<PosteriorEnsemble> {
    let params = structure.level().active_params();
    if chains.iter().any(|c| c.dim != params.len()) {
        return Err(Error::InvalidArgument("chain dimension does not match structure".into()));
    }
    let psrf = gelman_rubin(chains, config.burn_in)?;
    let offending: Vec<&'static str> = params
        .iter()
        .zip(&psrf)
        .filter(|(_, r)| !(**r < config.psrf_gate))
        .map(|(p, _)| p.name())
        .collect();
    let gate_passed = offending.is_empty();
    if !gate_passed && !force {
        return Err(Error::ConvergenceGate { gate: config.psrf_gate, params: offending });
    }

    let per_chain = chains.iter().map(|c| c.len().saturating_sub(config.burn_in)).collect::<Vec<_>>();
    let pool: usize = per_chain.iter().sum();
    if config.thinned_size > pool || config.thinned_size == 0 {
        return Err(Error::InvalidArgument("thinned_size exceeds pooled iterates".into()));
    }
    let picks = index::sample(rng, pool, config.thinned_size);
    let level = structure.level();
    let draws = picks
        .into_iter()
        .map(|mut k| {
            let mut c = 0;
            while k >= per_chain[c] {
                k -= per_chain[c];
                c += 1;
            }
            ParameterVector::from_active(level, chains[c].row(config.burn_in + k))
        })
        .collect();
    Ok(PosteriorEnsemble {
        structure,
        draws,
        diagnostics: Diagnostics {
            psrf: params.iter().copied().zip(psrf).collect(),
            acceptance: chains.iter().map(Chain::acceptance_rate).collect(),
            gate: config.psrf_gate,
            gate_passed,
            forced: !gate_passed,
        },
    })
}
