//! Small dense linear algebra on top of nalgebra: sample moments and a
//! Cholesky factor cached in a flat layout for allocation-free density
//! evaluation in the inner loops.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Points closer than this (relative) are treated as numerically singular.
const CHOLESKY_FLOOR: f64 = 1e-300;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Column means of a row-major sample.
pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (acc, x) in m.iter_mut().zip(r) {
            *acc += x;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Sample covariance with the `M - 1` denominator.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let mu = mean(rows);
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mu[j]);
            }
        }
    }
    let denom = (rows.len() as f64 - 1.0).max(1.0);
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Diagonal jitter `1e-8 * trace / dim`, floored at `1e-12`.
pub fn jitter_for(cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows() as f64;
    (1e-8 * cov.trace() / d).max(1e-12)
}

/// Lower-triangular Cholesky factor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl Cholesky {
    /// Factorises a symmetric matrix; `None` when it is not positive definite.
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let dim = cov.nrows();
        let chol = nalgebra::Cholesky::new(cov.clone())?;
        let l = chol.l();
        let mut lower = vec![0.0; dim * dim];
        let mut log_det = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
            let diag = l[(i, i)];
            if !(diag > CHOLESKY_FLOOR) || !diag.is_finite() {
                return None;
            }
            log_det += 2.0 * diag.ln();
        }
        Some(Self { dim, lower, log_det })
    }

    /// Factorises after adding `jitter` to the diagonal.
    pub fn with_jitter(cov: &DMatrix<f64>, jitter: f64) -> Option<Self> {
        let mut c = cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += jitter;
        }
        Self::new(&c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log |Sigma|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Reconstructs `L L^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        let l = DMatrix::from_row_slice(d, d, &self.lower);
        &l * l.transpose()
    }

    /// `|L^{-1} diff|^2` by forward substitution.
    pub fn mahalanobis_sq(&self, diff: &[f64]) -> f64 {
        let d = self.dim;
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            y[i] = (diff[i] - s) / self.lower[i * d + i];
            acc += y[i] * y[i];
        }
        acc
    }

    /// `L^{-1} v` by forward substitution.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = vec![0.0; d];
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&y).map(|(a, b)| a * b).sum();
            y[i] = (v[i] - s) / self.lower[i * d + i];
        }
        y
    }

    /// Log-density of `N(mean, L L^T)` at `x`.
    pub fn gaussian_logpdf(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = self.dim;
        let mut diff = [0.0f64; 16];
        let q = if d <= 16 {
            for i in 0..d {
                diff[i] = x[i] - mean[i];
            }
            self.mahalanobis_sq(&diff[..d])
        } else {
            let v: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
            self.mahalanobis_sq(&v)
        };
        -0.5 * (d as f64 * LN_2PI + self.log_det + q)
    }

    /// Draws `mean + L z` with `z` standard normal, coordinates drawn in order.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| {
                let row = &self.lower[i * d..i * d + i + 1];
                mean[i] + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// `log(sum(exp(xs)))` without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-density of the univariate normal.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}
