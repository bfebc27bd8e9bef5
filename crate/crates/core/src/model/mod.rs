//! Simulator models: prior, simulator, summaries and distance.
//!
//! Five benchmark models ship with the crate (`quadratic`, `gm`, `mg1`,
//! `seir`, `slcp`) plus a three-atom discrete toy used to check kernel
//! invariance exactly.

mod data;
mod gm;
mod mg1;
mod quadratic;
mod reference;
mod seir;
mod slcp;
mod toy;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

pub use data::{read_matrix_csv, write_matrix_csv, CsvMatrix};
pub use gm::{gm_likelihood, GaussianMixtureModel, GmExactPosterior, GM_GRID_POINTS};
pub use mg1::{departure_gaps, percentile_summary, MG1Queue, MG1_CUSTOMERS};
pub use quadratic::Quadratic;
pub use reference::{reference_mh_sampler, ReferenceOptions, ReferenceSample};
pub use seir::{Seir, SeirTrajectory, SEIR_POPULATION, SEIR_TRUE_THETA};
pub use slcp::{Slcp, SLCP_TRUE_THETA};
pub use toy::{AtomProposal, DiscreteToy, RingWalk};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter for {model}: {reason}")]
    InvalidParameter { model: String, reason: String },
    #[error("degenerate covariance at theta = {0:?}")]
    DegenerateCovariance(Vec<f64>),
    #[error("model {0} has no tractable likelihood; supply a reference sample file")]
    NonTractableLikelihood(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("observed target invalid: {0}")]
    InvalidTarget(String),
    #[error("data file: {0}")]
    Data(String),
}

/// Simulator contract shared by every benchmark model.
///
/// `simulate` returns raw data as a flat vector; `summarize` must be a
/// deterministic function of it. The distance is Euclidean unless a model
/// overrides it.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim_theta(&self) -> usize;
    fn dim_summary(&self) -> usize;
    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// `-inf` exactly outside the prior support.
    fn prior_logpdf(&self, theta: &[f64]) -> f64;
    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError>;
    fn summarize(&self, raw: &[f64]) -> Vec<f64>;

    fn distance(&self, s: &[f64], s0: &[f64]) -> f64 {
        euclidean(s, s0)
    }

    /// Exact log-likelihood of observed raw data, when tractable.
    fn log_likelihood(&self, _theta: &[f64], _observed_raw: &[f64]) -> Option<f64> {
        None
    }

    fn simulate_summary(
        &self,
        theta: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>, ModelError> {
        let raw = self.simulate(theta, rng)?;
        Ok(self.summarize(&raw))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A model together with its observed data and optional reference sample.
#[derive(Debug, Clone)]
pub struct ObservedTarget {
    pub model: Arc<dyn Model>,
    /// Raw observed data, kept for exact-likelihood reference sampling.
    pub y0_raw: Vec<f64>,
    pub y0_summary: Vec<f64>,
    pub reference: Option<Vec<Vec<f64>>>,
}

impl ObservedTarget {
    pub fn new(model: Arc<dyn Model>, y0_raw: Vec<f64>) -> Result<Self, ModelError> {
        let y0_summary = model.summarize(&y0_raw);
        if y0_summary.len() != model.dim_summary() {
            return Err(ModelError::InvalidTarget(format!(
                "summary length {} but model declares {}",
                y0_summary.len(),
                model.dim_summary()
            )));
        }
        Ok(Self { model, y0_raw, y0_summary, reference: None })
    }

    pub fn with_reference(mut self, reference: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let d = self.model.dim_theta();
        if reference.is_empty() || reference.iter().any(|r| r.len() != d) {
            return Err(ModelError::InvalidTarget(format!(
                "reference sample must be non-empty with {d} columns"
            )));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// Distance of a simulated summary to the observed summary.
    pub fn distance(&self, summary: &[f64]) -> f64 {
        self.model.distance(summary, &self.y0_summary)
    }
}

/// Names of the shipped benchmark models.
pub const MODEL_NAMES: [&str; 5] = ["quadratic", "gm", "mg1", "seir", "slcp"];

/// Builds a shipped model with its built-in observed data.
pub fn builtin_target(name: &str) -> Result<ObservedTarget, ModelError> {
    match name {
        "quadratic" => ObservedTarget::new(Arc::new(Quadratic), vec![0.0]),
        "gm" => ObservedTarget::new(Arc::new(GaussianMixtureModel), vec![0.0]),
        "mg1" => ObservedTarget::new(Arc::new(MG1Queue), data::mg1_observed()?),
        "seir" => {
            let y0 = data::seir_observed()?;
            let horizon = y0.len() - 1;
            ObservedTarget::new(Arc::new(Seir::new(horizon)), y0)
        }
        "slcp" => ObservedTarget::new(Arc::new(Slcp), data::slcp_observed()?),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// Loads raw observed data for a shipped model from a CSV file, replacing
/// the built-in data set.
pub fn target_from_observed_file(
    name: &str,
    path: &std::path::Path,
) -> Result<ObservedTarget, ModelError> {
    let m = read_matrix_csv(path)?;
    let raw: Vec<f64> = match name {
        "seir" => m.rows.iter().map(|r| *r.last().unwrap_or(&0.0)).collect(),
        _ => m.rows.into_iter().flatten().collect(),
    };
    let model: Arc<dyn Model> = match name {
        "quadratic" => Arc::new(Quadratic),
        "gm" => Arc::new(GaussianMixtureModel),
        "mg1" => Arc::new(MG1Queue),
        "seir" => Arc::new(Seir::new(raw.len().saturating_sub(1))),
        "slcp" => Arc::new(Slcp),
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    ObservedTarget::new(model, raw)
}
