use rand::{Rng, RngCore};

use super::{ProposalError, ProposalKernel, TrainingSet};
use crate::linalg::{jitter_for, log_sum_exp, sample_covariance, Cholesky, LN_2PI};

/// Factor of `2 (Sigma_hat + delta I)` for a training set.
fn doubled_covariance(d: &TrainingSet) -> Result<Cholesky, ProposalError> {
    if d.len() < 2 {
        return Err(ProposalError::InsufficientData { needed: 2, got: d.len() });
    }
    let cov = sample_covariance(&d.thetas);
    if cov.trace() <= 0.0 {
        return Err(ProposalError::DegenerateTrainingSet("all training points coincide".into()));
    }
    let delta = jitter_for(&cov);
    let mut c = cov;
    for i in 0..c.nrows() {
        c[(i, i)] += delta;
    }
    c *= 2.0;
    Cholesky::new(&c).ok_or_else(|| {
        ProposalError::DegenerateTrainingSet("covariance not positive definite after jitter".into())
    })
}

/// `theta' ~ N(theta, 2 Sigma_hat)`.
#[derive(Debug, Clone)]
pub struct GaussianRandomWalk {
    chol: Cholesky,
}

impl GaussianRandomWalk {
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        self.chol.covariance()
    }
}

pub fn fit_classic_rw(d: &TrainingSet) -> Result<GaussianRandomWalk, ProposalError> {
    Ok(GaussianRandomWalk { chol: doubled_covariance(d)? })
}

impl ProposalKernel for GaussianRandomWalk {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.chol.sample(current, rng)
    }

    fn logpdf(&self, proposed: &[f64], current: &[f64]) -> f64 {
        self.chol.gaussian_logpdf(proposed, current)
    }

    fn is_independence(&self) -> bool {
        false
    }

    fn dim(&self) -> usize {
        self.chol.dim()
    }
}

/// Equal-weight Gaussian mixture centred on the training points with the
/// shared covariance `2 Sigma_hat`: a random walk from a uniformly chosen
/// training particle.
#[derive(Debug, Clone)]
pub struct ClassicIndependence {
    centers: Vec<Vec<f64>>,
    whitened_centers: Vec<Vec<f64>>,
    chol: Cholesky,
}

pub fn fit_classic_independence(d: &TrainingSet) -> Result<ClassicIndependence, ProposalError> {
    let chol = doubled_covariance(d)?;
    let whitened_centers = d.thetas.iter().map(|c| chol.whiten(c)).collect();
    Ok(ClassicIndependence { centers: d.thetas.clone(), whitened_centers, chol })
}

impl ClassicIndependence {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }
}

impl ProposalKernel for ClassicIndependence {
    fn propose(&self, _current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let j = rng.random_range(0..self.centers.len());
        self.chol.sample(&self.centers[j], rng)
    }

    fn logpdf(&self, proposed: &[f64], _current: &[f64]) -> f64 {
        let x = self.chol.whiten(proposed);
        let d = self.chol.dim() as f64;
        let norm = -0.5 * (d * LN_2PI + self.chol.log_det()) - (self.centers.len() as f64).ln();
        let terms = self.whitened_centers.iter().map(|c| {
            -0.5 * c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        });
        norm + log_sum_exp(terms)
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.chol.dim()
    }
}
