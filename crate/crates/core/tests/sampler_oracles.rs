use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surgebma_core::math::Matrix;
use surgebma_core::mle::mle_fit;
use surgebma_core::model::{ModelStructure, Param, ParameterVector, Posterior};
use surgebma_core::priors::PriorSet;
use surgebma_core::sampler::{
    chain_rng, gelman_rubin, initial_factor, pool_and_thin, run_chain, run_chains, ChainConfig, ChainState, Ram,
    TARGET_ACCEPTANCE,
};
use surgebma_core::simulate::{simulate_record, SimulationSpec};

fn correlated_gaussian(dim: usize, rho: f64) -> impl Fn(&[f64]) -> f64 {
    // precision of the equicorrelated covariance (1 - ρ) I + ρ 11ᵀ
    let a = 1.0 / (1.0 - rho);
    let b = rho / ((1.0 - rho) * (1.0 + (dim as f64 - 1.0) * rho));
    move |x: &[f64]| {
        let s: f64 = x.iter().sum();
        let q: f64 = a * x.iter().map(|v| v * v).sum::<f64>() - b * s * s;
        -0.5 * q
    }
}

#[test]
fn acceptance_coerced_for_dimensions_two_to_six() {
    for dim in 2..=6 {
        let target = correlated_gaussian(dim, 0.5);
        let cfg = ChainConfig::with_size(50_000, 1, 100, 40 + dim as u64);
        let init = vec![0.5; dim];
        let chain = run_chain(&target, &init, &initial_factor(&init), &cfg, 0).unwrap();
        let rate = chain.acceptance_rate();
        assert!((rate - TARGET_ACCEPTANCE).abs() < 0.05, "dim {dim}: {rate}");
    }
}

#[test]
fn standard_normal_long_run_acceptance() {
    let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]);
    let cfg = ChainConfig::with_size(50_000, 1, 100, 1);
    let chain = run_chain(&target, &[0.0, 0.0], &Matrix::diagonal(&[1.0, 1.0]), &cfg, 0).unwrap();
    assert!((chain.acceptance_rate() - 0.234).abs() < 0.05);
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn frozen_kernel_samples_the_target() {
    let target = |x: &[f64]| -0.5 * x[0] * x[0];
    let mut rng = chain_rng(77, 0);
    let mut ram = Ram::new(Matrix::diagonal(&[0.1]), TARGET_ACCEPTANCE, 0.66);
    let mut state = ChainState::new(vec![0.0], &target);
    for _ in 0..10_000 {
        ram.step(&mut state, &target, &mut rng);
    }
    ram.adapt = false;
    let frozen = ram.factor.clone();
    let n = 100_000;
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            ram.step(&mut state, &target, &mut rng);
            state.position[0]
        })
        .collect();
    assert_eq!(ram.factor, frozen);
    x.sort_by(f64::total_cmp);
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = normal_cdf(*v);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.02, "KS statistic {d}");
}

#[test]
fn converged_chains_have_small_psrf() {
    let target = correlated_gaussian(3, 0.6);
    let cfg = ChainConfig::with_size(20_000, 4, 1000, 5);
    let chains = run_chains(&target, &[0.2, -0.1, 0.0], &cfg).unwrap();
    for r in gelman_rubin(&chains, cfg.burn_in).unwrap() {
        assert!(r < 1.05, "psrf {r}");
    }
}

#[test]
fn thinned_mean_tracks_pool_mean() {
    let target = correlated_gaussian(3, 0.3);
    let cfg = ChainConfig::with_size(10_000, 4, 1000, 12);
    let init = [1.0, 1.0, 1.0];
    let shifted = |x: &[f64]| target(&[x[0] - 1.0, x[1] - 1.0, x[2] - 1.0]);
    let chains = run_chains(&shifted, &init, &cfg).unwrap();
    let e = pool_and_thin(ModelStructure::STATIONARY, &chains, &cfg, false, &mut chain_rng(3, 100)).unwrap();
    assert_eq!(e.len(), 1000);
    for (j, p) in [Param::Lambda0, Param::Sigma0, Param::Xi0].into_iter().enumerate() {
        let pool: Vec<f64> = chains.iter().flat_map(|c| c.column(j, cfg.burn_in)).collect();
        let pm = pool.iter().sum::<f64>() / pool.len() as f64;
        let pv = pool.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (pool.len() - 1) as f64;
        let tm = e.draws.iter().map(|d| d.get(p)).sum::<f64>() / e.len() as f64;
        let se = (pv / e.len() as f64 * (1.0 - e.len() as f64 / pool.len() as f64)).sqrt();
        assert!((tm - pm).abs() < 4.0 * se, "{p:?}: {tm} vs {pm}");
    }
}

#[test]
fn stationary_posterior_mean_near_truth() {
    let truth = ParameterVector([0.01, 0.0, 0.2, 0.0, 0.1, 0.0]);
    let st = ModelStructure::STATIONARY;
    let spec = SimulationSpec { theta: truth, structure: st, cov: None, first_year: 1850, last_year: 1999, threshold: 1.0, seed: 61 };
    let set = simulate_record(&spec).unwrap();
    let fit = mle_fit(st, &set, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let post = Posterior::new(st, &set, None, PriorSet::flat(st)).unwrap();
    let cfg = ChainConfig::desk_scale(9);
    let chains = run_chains(&|x: &[f64]| post.log_density(x), &fit.active(st.level()), &cfg).unwrap();
    let e = pool_and_thin(st, &chains, &cfg, false, &mut chain_rng(9, 99)).unwrap();
    let lambda: Vec<f64> = e.draws.iter().map(|d| d.get(Param::Lambda0)).collect();
    let m = lambda.iter().sum::<f64>() / lambda.len() as f64;
    // under a flat prior the rate posterior is Gamma(n + 1, total days)
    let n = set.total_count() as f64;
    let days: f64 = set.years.iter().map(|b| b.duration_days).sum();
    let exact_mean = (n + 1.0) / days;
    let exact_sd = (n + 1.0).sqrt() / days;
    let mc_se = exact_sd / (lambda.len() as f64).sqrt();
    // 3 SE, widened threefold for within-chain autocorrelation
    assert!((m - exact_mean).abs() < 9.0 * mc_se, "{m} vs {exact_mean}");
    // and the truth lies within the posterior bulk
    assert!((truth.get(Param::Lambda0) - m).abs() < 3.0 * exact_sd);
}
