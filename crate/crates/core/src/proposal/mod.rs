//! Proposal kernels `q(theta' | theta)` and their fitting from particles.

mod classic;
mod defensive;
mod mixture;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smc::Particle;

pub use classic::{fit_classic_independence, fit_classic_rw, ClassicIndependence, GaussianRandomWalk};
pub use defensive::{defensive_wrap, Defensive};
pub use mixture::{
    bic_search, fit_gaussian_mixture, fit_gaussian_mixture_with, BicCandidate, CovarianceStructure, EmFit, EmOptions,
    MixtureComponents, MixtureDensity, MixtureSnapshot,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("EM degenerate: component {0} lost its responsibility mass twice")]
    EmDegenerate(usize),
    #[error("flow training diverged: {0}")]
    TrainingDiverged(String),
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
}

/// A fitted conditional density `q(theta' | theta)`.
///
/// Independence proposals ignore `current` in both methods.
pub trait ProposalKernel: Send + Sync + fmt::Debug {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
    /// `log q(proposed | current)`.
    fn logpdf(&self, proposed: &[f64], current: &[f64]) -> f64;
    fn is_independence(&self) -> bool;
    fn dim(&self) -> usize;
}

impl<T: ProposalKernel + ?Sized> ProposalKernel for Arc<T> {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (**self).propose(current, rng)
    }
    fn logpdf(&self, proposed: &[f64], current: &[f64]) -> f64 {
        (**self).logpdf(proposed, current)
    }
    fn is_independence(&self) -> bool {
        (**self).is_independence()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
}

/// Which previous-iteration particles train the proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TrainingMode {
    /// All previous-iteration parameters.
    #[serde(rename = "A")]
    All,
    /// Previous-iteration parameters whose distance is within the new threshold.
    #[serde(rename = "B")]
    #[default]
    WithinEpsilon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub thetas: Vec<Vec<f64>>,
    pub mode: TrainingMode,
}

impl TrainingSet {
    pub fn new(thetas: Vec<Vec<f64>>, mode: TrainingMode) -> Self {
        Self { thetas, mode }
    }

    /// Builds the set from the population before resampling.
    pub fn from_particles(particles: &[Particle], epsilon: f64, mode: TrainingMode) -> Self {
        let thetas = particles
            .iter()
            .filter(|p| mode == TrainingMode::All || p.dist <= epsilon)
            .map(|p| p.theta.clone())
            .collect();
        Self { thetas, mode }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }
}

/// Summed log-density over a sample. NaN counts as `-inf`.
pub fn log_density_sum(q: &dyn ProposalKernel, thetas: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for t in thetas {
        let l = q.logpdf(t, t);
        if l.is_nan() || l == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        total += l;
    }
    total
}

/// Outcome of comparing a trained proposal with the classic independence one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallbackDecision {
    pub used_fallback: bool,
    #[serde(with = "crate::serde_float")]
    pub candidate_objective: f64,
    #[serde(with = "crate::serde_float")]
    pub classic_objective: f64,
}

/// Returns whichever independence proposal has the larger summed test
/// log-density; ties go to the candidate.
pub fn select_fallback(
    candidate: Arc<dyn ProposalKernel>,
    classic: Arc<dyn ProposalKernel>,
    test: &TrainingSet,
) -> (Arc<dyn ProposalKernel>, FallbackDecision) {
    let c = log_density_sum(candidate.as_ref(), &test.thetas);
    let k = log_density_sum(classic.as_ref(), &test.thetas);
    let decision = FallbackDecision {
        used_fallback: k > c,
        candidate_objective: c,
        classic_objective: k,
    };
    if decision.used_fallback {
        (classic, decision)
    } else {
        (candidate, decision)
    }
}
