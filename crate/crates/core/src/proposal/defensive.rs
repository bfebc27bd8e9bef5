use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{ProposalError, ProposalKernel};
use crate::linalg::log_sum_exp;
use crate::model::Model;

/// `eta * prior + (1 - eta) * q_star`, which bounds `prior / q` by `1 / eta`.
#[derive(Debug, Clone)]
pub struct Defensive {
    inner: Arc<dyn ProposalKernel>,
    prior: Arc<dyn Model>,
    eta: f64,
}

pub fn defensive_wrap(
    q_star: Arc<dyn ProposalKernel>,
    prior: Arc<dyn Model>,
    eta: f64,
) -> Result<Defensive, ProposalError> {
    if !q_star.is_independence() {
        return Err(ProposalError::InvalidProposal(
            "defensive mixture needs an independence proposal".into(),
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(ProposalError::InvalidProposal(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(Defensive { inner: q_star, prior, eta })
}

impl Defensive {
    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl ProposalKernel for Defensive {
    /// One uniform picks the branch, then the branch draws.
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        if u < self.eta {
            self.prior.prior_sample(rng)
        } else {
            self.inner.propose(current, rng)
        }
    }

    fn logpdf(&self, proposed: &[f64], current: &[f64]) -> f64 {
        let a = if self.eta > 0.0 {
            self.eta.ln() + self.prior.prior_logpdf(proposed)
        } else {
            f64::NEG_INFINITY
        };
        let b = if self.eta < 1.0 {
            (1.0 - self.eta).ln() + self.inner.logpdf(proposed, current)
        } else {
            f64::NEG_INFINITY
        };
        log_sum_exp([a, b])
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_target;
    use crate::proposal::{fit_classic_independence, fit_classic_rw, TrainingMode, TrainingSet};
    use crate::rng::substream;

    fn gm_fixture() -> (Arc<dyn Model>, Arc<dyn ProposalKernel>) {
        let t = builtin_target("gm").unwrap();
        let mut rng = substream(1, &[]);
        let pts = (0..40).map(|_| vec![0.3 * rng.random::<f64>() - 0.15]).collect();
        let q = fit_classic_independence(&TrainingSet::new(pts, TrainingMode::WithinEpsilon)).unwrap();
        (t.model.clone(), Arc::new(q))
    }

    #[test]
    fn eta_one_is_the_prior() {
        let (prior, q) = gm_fixture();
        let d = defensive_wrap(q, prior.clone(), 1.0).unwrap();
        for x in [-9.0, -1.0, 0.0, 4.5] {
            assert!((d.logpdf(&[x], &[]) - prior.prior_logpdf(&[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_eta_is_the_inner_proposal() {
        let (prior, q) = gm_fixture();
        let d = defensive_wrap(q.clone(), prior, 1e-12).unwrap();
        for x in [-0.1, 0.0, 0.05] {
            assert!((d.logpdf(&[x], &[]) - q.logpdf(&[x], &[])).abs() < 1e-9);
        }
    }

    #[test]
    fn random_walk_is_refused() {
        let (prior, _) = gm_fixture();
        let rw = fit_classic_rw(&TrainingSet::new(vec![vec![0.0], vec![1.0]], TrainingMode::All)).unwrap();
        assert!(defensive_wrap(Arc::new(rw), prior, 0.1).is_err());
    }
}
