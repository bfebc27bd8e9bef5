use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Model, ModelError};
use crate::linalg::LN_2PI;

/// Parameters used to generate the shipped SLCP observations.
pub const SLCP_TRUE_THETA: [f64; 5] = [0.7, -1.2, 1.1, 0.9, 0.6];

const N_DRAWS: usize = 4;
const PRIOR_HALF_WIDTH: f64 = 3.0;
const DIAG_JITTER: f64 = 1e-10;

/// Simple-likelihood complex-posterior model: four draws from a bivariate
/// normal with mean `(theta1, theta2)` and covariance
/// `[[s1^2, rho s1 s2], [rho s1 s2, s2^2]]`, where `s1 = theta3^2`,
/// `s2 = theta4^2` and `rho = tanh(theta5)`. Prior `U(-3, 3)^5`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Slcp;

impl Slcp {
    /// Covariance entries `(c11, c12, c22)` before jitter.
    pub fn covariance(theta: &[f64]) -> (f64, f64, f64) {
        let s1 = theta[2] * theta[2];
        let s2 = theta[3] * theta[3];
        let rho = theta[4].tanh();
        (s1 * s1, rho * s1 * s2, s2 * s2)
    }

    /// Jittered lower Cholesky factor `(l11, l21, l22)`.
    pub fn cholesky(theta: &[f64]) -> Result<(f64, f64, f64), ModelError> {
        let (c11, c12, c22) = Self::covariance(theta);
        let a = c11 + DIAG_JITTER;
        let c = c22 + DIAG_JITTER;
        let l11 = a.sqrt();
        let l21 = c12 / l11;
        let rem = c - l21 * l21;
        if !(rem > 0.0) || !l11.is_finite() {
            return Err(ModelError::DegenerateCovariance(theta.to_vec()));
        }
        Ok((l11, l21, rem.sqrt()))
    }
}

impl Model for Slcp {
    fn name(&self) -> &str {
        "slcp"
    }

    fn dim_theta(&self) -> usize {
        5
    }

    fn dim_summary(&self) -> usize {
        2 * N_DRAWS
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..5).map(|_| rng.random_range(-PRIOR_HALF_WIDTH..PRIOR_HALF_WIDTH)).collect()
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        if theta.iter().all(|t| t.abs() <= PRIOR_HALF_WIDTH) {
            -5.0 * (2.0 * PRIOR_HALF_WIDTH).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        let (l11, l21, l22) = Self::cholesky(theta)?;
        let mut out = Vec::with_capacity(2 * N_DRAWS);
        for _ in 0..N_DRAWS {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            out.push(theta[0] + l11 * z1);
            out.push(theta[1] + l21 * z1 + l22 * z2);
        }
        Ok(out)
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }

    fn log_likelihood(&self, theta: &[f64], observed_raw: &[f64]) -> Option<f64> {
        let Ok((l11, l21, l22)) = Self::cholesky(theta) else {
            return Some(f64::NEG_INFINITY);
        };
        let log_det = 2.0 * (l11.ln() + l22.ln());
        let ll = observed_raw
            .chunks_exact(2)
            .map(|x| {
                let u1 = (x[0] - theta[0]) / l11;
                let u2 = (x[1] - theta[1] - l21 * u1) / l22;
                -0.5 * (2.0 * LN_2PI + log_det + u1 * u1 + u2 * u2)
            })
            .sum();
        Some(ll)
    }
}
