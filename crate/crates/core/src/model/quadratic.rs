use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Model, ModelError};
use crate::linalg::normal_logpdf;

/// `y ~ N(theta1 - theta2^2, 0.01^2)` with independent standard normal
/// priors. The posterior at `y0 = 0` hugs the parabola `theta1 = theta2^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl Quadratic {
    pub const NOISE_SD: f64 = 0.01;

    /// Simulator output for a given standard normal innovation `z`.
    pub fn observe(theta: &[f64], z: f64) -> f64 {
        theta[0] - theta[1] * theta[1] + Self::NOISE_SD * z
    }
}

impl Model for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim_theta(&self) -> usize {
        2
    }

    fn dim_summary(&self) -> usize {
        1
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        normal_logpdf(theta[0], 0.0, 1.0) + normal_logpdf(theta[1], 0.0, 1.0)
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        Ok(vec![Self::observe(theta, rng.sample(StandardNormal))])
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }

    fn log_likelihood(&self, theta: &[f64], observed_raw: &[f64]) -> Option<f64> {
        Some(normal_logpdf(observed_raw[0], theta[0] - theta[1] * theta[1], Self::NOISE_SD))
    }
}
