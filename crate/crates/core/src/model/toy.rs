use rand::{Rng, RngCore};

use super::{Model, ModelError};
use crate::proposal::ProposalKernel;

/// Finite model for checking kernel invariance exactly.
///
/// `theta` is an atom index stored as `f64`, the prior is uniform over the
/// atoms, and each simulation is a hit (`y = 0`) with the atom's hit
/// probability or a miss (`y = 1`). With `y0 = 0` and any `eps` in
/// `[0, 1)` the ABC target restricted to hits is `pi(a) p(a) / Z`.
#[derive(Debug, Clone)]
pub struct DiscreteToy {
    pub hit_prob: Vec<f64>,
}

impl DiscreteToy {
    pub fn new(hit_prob: Vec<f64>) -> Self {
        Self { hit_prob }
    }

    pub fn atoms(&self) -> usize {
        self.hit_prob.len()
    }

    /// Stationary law over atoms of the ABC target at `eps < 1`.
    pub fn target(&self) -> Vec<f64> {
        let z: f64 = self.hit_prob.iter().sum();
        self.hit_prob.iter().map(|p| p / z).collect()
    }

    fn atom(&self, theta: &[f64]) -> Option<usize> {
        let a = theta[0];
        (a >= 0.0 && a.fract() == 0.0 && (a as usize) < self.atoms()).then_some(a as usize)
    }
}

impl Model for DiscreteToy {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn dim_summary(&self) -> usize {
        1
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(0..self.atoms()) as f64]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        match self.atom(theta) {
            Some(_) => -(self.atoms() as f64).ln(),
            None => f64::NEG_INFINITY,
        }
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        let a = self.atom(theta).ok_or_else(|| ModelError::InvalidParameter {
            model: "toy".into(),
            reason: format!("{theta:?} is not an atom"),
        })?;
        let hit = rng.random::<f64>() < self.hit_prob[a];
        Ok(vec![if hit { 0.0 } else { 1.0 }])
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }
}

/// Independence proposal with a fixed probability mass function over atoms.
#[derive(Debug, Clone)]
pub struct AtomProposal {
    pub pmf: Vec<f64>,
}

impl ProposalKernel for AtomProposal {
    fn propose(&self, _current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return vec![i as f64];
            }
        }
        vec![(self.pmf.len() - 1) as f64]
    }

    fn logpdf(&self, proposed: &[f64], _current: &[f64]) -> f64 {
        let a = proposed[0];
        if a >= 0.0 && a.fract() == 0.0 && (a as usize) < self.pmf.len() {
            self.pmf[a as usize].ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        1
    }
}

/// Random-walk proposal on a ring of atoms: moves to each neighbour with
/// probability 1/2. Symmetric, so `q(a|b) = q(b|a)`.
#[derive(Debug, Clone)]
pub struct RingWalk {
    pub atoms: usize,
}

impl ProposalKernel for RingWalk {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let a = current[0] as usize;
        let next = if rng.random::<bool>() { (a + 1) % self.atoms } else { (a + self.atoms - 1) % self.atoms };
        vec![next as f64]
    }

    fn logpdf(&self, proposed: &[f64], current: &[f64]) -> f64 {
        let (a, b) = (current[0] as usize, proposed[0] as usize);
        let mut p = 0.0f64;
        if b == (a + 1) % self.atoms {
            p += 0.5;
        }
        if b == (a + self.atoms - 1) % self.atoms {
            p += 0.5;
        }
        p.ln()
    }

    fn is_independence(&self) -> bool {
        false
    }

    fn dim(&self) -> usize {
        1
    }
}
