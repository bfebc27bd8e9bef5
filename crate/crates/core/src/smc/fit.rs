use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::flow::{train_flow, FlowConfig, SplineFlow, TrainReport};
use crate::model::ObservedTarget;
use crate::proposal::{
    defensive_wrap, fit_classic_independence, fit_classic_rw, fit_gaussian_mixture, select_fallback,
    FallbackDecision, MixtureComponents, ProposalError, ProposalKernel, TrainingSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    ClassicRw,
    ClassicIndependence,
    Mixture(MixtureComponents),
    Flow(FlowConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub kind: ProposalKind,
    /// Prior weight of a defensive mixture, when wrapped.
    pub defensive_eta: Option<f64>,
    /// Compare against the classic independence proposal on the test set.
    pub fallback: bool,
}

impl ProposalSpec {
    pub fn new(kind: ProposalKind) -> Self {
        Self { kind, defensive_eta: None, fallback: false }
    }

    pub fn is_independence(&self) -> bool {
        !matches!(self.kind, ProposalKind::ClassicRw)
    }

    pub fn is_flow(&self) -> bool {
        matches!(self.kind, ProposalKind::Flow(_))
    }

    pub fn label(&self) -> String {
        let base = match &self.kind {
            ProposalKind::ClassicRw => "classic_rw".to_string(),
            ProposalKind::ClassicIndependence => "classic_independence".to_string(),
            ProposalKind::Mixture(MixtureComponents::Fixed(k)) => format!("mixture_{k}"),
            ProposalKind::Mixture(MixtureComponents::Auto) => "mixture_auto".to_string(),
            ProposalKind::Flow(_) => "flow".to_string(),
        };
        let mut s = base;
        if let Some(eta) = self.defensive_eta {
            s.push_str(&format!("+defensive{eta}"));
        }
        if self.fallback {
            s.push_str("+fallback");
        }
        s
    }
}

pub struct FittedProposal {
    pub kernel: Arc<dyn ProposalKernel>,
    pub fallback: Option<FallbackDecision>,
    /// Trained flow to warm-start the next iteration.
    pub flow: Option<SplineFlow>,
    pub flow_report: Option<TrainReport>,
}

/// Fits the configured proposal on `train`; `test` drives early stopping
/// and the fallback comparison.
pub fn fit_proposal(
    spec: &ProposalSpec,
    target: &ObservedTarget,
    train: &TrainingSet,
    test: Option<&TrainingSet>,
    warm: Option<&SplineFlow>,
    rng: &mut dyn RngCore,
) -> Result<FittedProposal, ProposalError> {
    let mut flow = None;
    let mut flow_report = None;
    let candidate: Result<Arc<dyn ProposalKernel>, ProposalError> = match &spec.kind {
        ProposalKind::ClassicRw => fit_classic_rw(train).map(|q| Arc::new(q) as _),
        ProposalKind::ClassicIndependence => fit_classic_independence(train).map(|q| Arc::new(q) as _),
        ProposalKind::Mixture(k) => fit_gaussian_mixture(train, *k, rng).map(|q| Arc::new(q) as _),
        ProposalKind::Flow(cfg) => {
            let test = test.ok_or_else(|| {
                ProposalError::InvalidProposal("flow proposals need a test population".into())
            })?;
            let start = match warm {
                Some(f) => f.clone(),
                None => SplineFlow::new(train.dim(), cfg, rng),
            };
            train_flow(&start, &train.thetas, &test.thetas, cfg, rng).map(|(f, rep)| {
                flow = Some(f.clone());
                flow_report = Some(rep);
                Arc::new(f) as _
            })
        }
    };

    let (kernel, fallback) = if spec.fallback {
        let test = test.ok_or_else(|| {
            ProposalError::InvalidProposal("fallback needs a test population".into())
        })?;
        let classic: Arc<dyn ProposalKernel> = Arc::new(fit_classic_independence(train)?);
        match candidate {
            Ok(c) => {
                let (k, d) = select_fallback(c, classic, test);
                (k, Some(d))
            }
            Err(ProposalError::TrainingDiverged(_)) => {
                let d = FallbackDecision {
                    used_fallback: true,
                    candidate_objective: f64::NEG_INFINITY,
                    classic_objective: crate::proposal::log_density_sum(classic.as_ref(), &test.thetas),
                };
                (classic, Some(d))
            }
            Err(e) => return Err(e),
        }
    } else {
        (candidate?, None)
    };

    let kernel = match spec.defensive_eta {
        Some(eta) => Arc::new(defensive_wrap(kernel, target.model.clone(), eta)?) as _,
        None => kernel,
    };
    Ok(FittedProposal { kernel, fallback, flow, flow_report })
}
