use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Model, ModelError};
use crate::linalg::normal_logpdf;

/// Grid size for the exact posterior's inverse CDF.
pub const GM_GRID_POINTS: usize = 200_000;

const PRIOR_HALF_WIDTH: f64 = 10.0;
const WIDE_SD: f64 = 1.0;
const NARROW_SD: f64 = 0.1;

/// `y ~ 0.5 N(theta, 1) + 0.5 N(theta, 0.01)`, `theta ~ U(-10, 10)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianMixtureModel;

/// Likelihood density `f(y | theta)`.
pub fn gm_likelihood(y: f64, theta: f64) -> f64 {
    0.5 * (normal_logpdf(y, theta, WIDE_SD).exp() + normal_logpdf(y, theta, NARROW_SD).exp())
}

impl Model for GaussianMixtureModel {
    fn name(&self) -> &str {
        "gm"
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn dim_summary(&self) -> usize {
        1
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-PRIOR_HALF_WIDTH..PRIOR_HALF_WIDTH)]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        if theta[0].abs() <= PRIOR_HALF_WIDTH {
            -(2.0 * PRIOR_HALF_WIDTH).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        let sd = if rng.random::<f64>() < 0.5 { WIDE_SD } else { NARROW_SD };
        let z: f64 = rng.sample(StandardNormal);
        Ok(vec![theta[0] + sd * z])
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }

    fn log_likelihood(&self, theta: &[f64], observed_raw: &[f64]) -> Option<f64> {
        Some(gm_likelihood(observed_raw[0], theta[0]).ln())
    }
}

/// Exact posterior `p(theta | y0)` by grid inverse CDF on the prior support.
#[derive(Debug, Clone)]
pub struct GmExactPosterior {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl GmExactPosterior {
    pub fn new(y0: f64, points: usize) -> Self {
        assert!(points >= 2);
        let h = 2.0 * PRIOR_HALF_WIDTH / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| -PRIOR_HALF_WIDTH + h * i as f64).collect();
        let dens: Vec<f64> = grid.iter().map(|&t| gm_likelihood(y0, t)).collect();
        let mut cdf = Vec::with_capacity(points);
        cdf.push(0.0);
        for i in 1..points {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * h * (dens[i - 1] + dens[i]));
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { grid, cdf }
    }

    /// Posterior quantile with linear interpolation inside a grid cell.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let j = self.cdf.partition_point(|&c| c < p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.grid[j - 1] + frac * (self.grid[j] - self.grid[j - 1])
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}
