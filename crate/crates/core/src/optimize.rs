//! Nelder-Mead simplex minimization.

use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop once `max f - min f` over the simplex falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { f_tol: 1e-8, max_evals: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`, building the initial simplex by stepping
/// `steps[i]` along each axis. Non-finite values count as `+∞`.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], options: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;

    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < options.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if values[0].is_finite() && spread.abs() < options.f_tol {
            converged = true;
            break;
        }

        let mut centroid = alloc::vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(alpha);
        let fr = eval(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(gamma);
            let fe = eval(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(rho);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-rho);
            let fc = eval(&c);
            (c, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + shrink * (*x - b);
            }
            values[i] = eval(&simplex[i]);
        }
        evals += n;
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { f_tol: 1e-14, max_evals: 50_000 };
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.1, 0.1], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) - crate::math::ln(x[0]) };
        let m = nelder_mead(f, &[2.0], &[1.0], &NelderMeadOptions::default());
        // minimum of (x - 0.5)² - ln x: 2x - 1 - 1/x = 0
        let root = (1.0 + libm::sqrt(9.0)) / 4.0;
        assert!((m.x[0] - root).abs() < 1e-3);
    }
}
