use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use surgebma_core::covariates::{normalize_minmax, CovariateKind};
use surgebma_core::evidence::{aggregate_by_covariate, bma_weights, bridge_log_evidence, EvidenceEstimate};
use surgebma_core::hazard::return_level_from;
use surgebma_core::model::ModelStructure;

fn estimates(logs: &[f64]) -> Vec<EvidenceEstimate> {
    ModelStructure::all()
        .into_iter()
        .zip(logs)
        .map(|(structure, l)| EvidenceEstimate {
            structure,
            log_evidence: *l,
            log_evidence_se: 0.0,
            iterations_used: 1,
            relative_change_at_stop: 0.0,
            converged: true,
        })
        .collect()
}

proptest! {
    #[test]
    fn weights_normalized_and_shift_invariant(
        logs in prop::collection::vec(-800.0f64..50.0, 13),
        shift in -1e4f64..1e4,
    ) {
        let w = bma_weights(&estimates(&logs)).unwrap();
        let total: f64 = w.weights.iter().map(|(_, v)| v).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|(_, v)| (0.0..=1.0).contains(v)));

        let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
        let w2 = bma_weights(&estimates(&shifted)).unwrap();
        for ((_, a), (_, b)) in w.weights.iter().zip(&w2.weights) {
            prop_assert!((a - b).abs() < 1e-9);
        }

        let groups = aggregate_by_covariate(&w).unwrap();
        prop_assert_eq!(groups.len(), 5);
        prop_assert!((groups.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minmax_ignores_positive_affine_maps(
        raw in prop::collection::vec(-50.0f64..50.0, 10..40),
        scale in 0.01f64..100.0,
        offset in -100.0f64..100.0,
    ) {
        let series: Vec<(i32, f64)> = raw.iter().enumerate().map(|(i, v)| (1950 + i as i32, *v)).collect();
        let mapped: Vec<(i32, f64)> = series.iter().map(|(y, v)| (*y, scale * v + offset)).collect();
        let range = (1950, 1950 + raw.len() as i32 - 1);
        match (normalize_minmax(CovariateKind::Temperature, &series, range), normalize_minmax(CovariateKind::Temperature, &mapped, range)) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
                prop_assert!(a.values.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn return_level_monotone_and_bounded(
        lambda in 0.003f64..0.05,
        sigma in 0.05f64..1.0,
        xi in -0.5f64..0.5,
        mu in 0.5f64..2.0,
        t1 in 1.0f64..500.0,
        dt in 0.1f64..500.0,
    ) {
        let lo = return_level_from(lambda, sigma, xi, mu, t1);
        let hi = return_level_from(lambda, sigma, xi, mu, t1 + dt);
        if let (Ok(a), Ok(b)) = (lo, hi) {
            prop_assert!(b >= a);
            prop_assert!(a >= mu);
            if xi < -1e-8 {
                prop_assert!(b <= mu - sigma / xi + 1e-12);
            }
            let raised = return_level_from(lambda, sigma, xi, mu + 0.1, t1).unwrap();
            prop_assert!((raised - a - 0.1).abs() < 1e-12);
        } else {
            prop_assert!(t1 * lambda * 365.25 < 1.0);
        }
    }
}

/// Closed-form log marginal likelihood of `y_i ~ N(θ, s²)`, `θ ~ N(m0, t²)`.
fn conjugate_log_evidence(y: &[f64], s: f64, m0: f64, t: f64) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let ss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * s * s).ln()
        - 0.5 * (1.0 + n * t * t / (s * s)).ln()
        - 0.5 * (ss / (s * s) + n * (ybar - m0).powi(2) / (s * s + n * t * t))
}

#[test]
fn conjugate_normal_mean_evidence() {
    let (s, m0, t) = (1.5, 0.3, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..40).map(|_| Normal::new(1.2, s).unwrap().sample(&mut rng)).collect();
    let exact = conjugate_log_evidence(&y, s, m0, t);

    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let prec = 1.0 / (t * t) + n / (s * s);
    let post = Normal::new((m0 / (t * t) + n * ybar / (s * s)) / prec, prec.recip().sqrt()).unwrap();
    let log_joint = |x: &[f64]| {
        let th = x[0];
        let lp = -0.5 * ((th - m0) / t).powi(2) - (t * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let ll: f64 = y.iter().map(|v| -0.5 * ((v - th) / s).powi(2) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum();
        lp + ll
    };

    let mut results = Vec::new();
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let draws: Vec<Vec<f64>> = (0..4000).map(|_| vec![post.sample(&mut rng)]).collect();
        let b = bridge_log_evidence(&draws, log_joint, &mut rng).unwrap();
        assert!(b.converged && b.iterations_used >= 1);
        assert!((b.log_evidence - exact).abs() < 0.05, "{} vs {exact}", b.log_evidence);
        results.push(b);
    }
    let combined = (results[0].log_evidence_se.powi(2) + results[1].log_evidence_se.powi(2)).sqrt();
    assert!((results[0].log_evidence - results[1].log_evidence).abs() < 3.0 * combined);
}
