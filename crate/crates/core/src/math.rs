//! Small numeric helpers shared across modules. All of it works without `std`.

use alloc::vec::Vec;

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| exp(v - max)).sum();
    max + ln(sum)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). Every module that needs a quantile goes through here.
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Dense row-major square matrix, sized for the handful of parameters used here.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: alloc::vec![0.0; dim * dim] }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// `L v` for lower-triangular `self`.
    pub fn lower_mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..=i).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Option<Matrix> {
        let n = self.dim;
        let mut l = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[(i, i)] = sqrt(s);
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Some(l)
    }

    /// Solves `L x = b` by forward substitution (`self` lower-triangular).
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = alloc::vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut s = b[i];
            for j in 0..i {
                s -= self[(i, j)] * x[j];
            }
            x[i] = s / self[(i, i)];
        }
        x
    }

    /// In-place rank-one update of a lower Cholesky factor:
    /// afterwards `L Lᵀ = L₀ L₀ᵀ + sign · x xᵀ`. Returns `false` when a
    /// downdate would lose positive definiteness (factor left unchanged).
    pub fn cholesky_rank_one(&mut self, x: &[f64], downdate: bool) -> bool {
        let n = self.dim;
        let backup = self.data.clone();
        let mut x = x.to_vec();
        let sign = if downdate { -1.0 } else { 1.0 };
        for k in 0..n {
            let lkk = self[(k, k)];
            let r2 = lkk * lkk + sign * x[k] * x[k];
            if !(r2 > 0.0) || !r2.is_finite() {
                self.data = backup;
                return false;
            }
            let r = sqrt(r2);
            let c = r / lkk;
            let s = x[k] / lkk;
            self[(k, k)] = r;
            for i in (k + 1)..n {
                let lik = (self[(i, k)] + sign * s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                self[(i, k)] = lik;
            }
        }
        true
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}
