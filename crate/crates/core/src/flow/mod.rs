//! Rational-quadratic spline flow used as an independence proposal.
//!
//! The density direction maps a standardised parameter `x` to base noise
//! `z` one coordinate at a time, `z_d = g(x_d; c_d(x_{<d}))`, where `g` is a
//! monotone spline with identity tails and `c` a masked autoregressive
//! conditioner. Density evaluation is a single conditioner pass; sampling
//! inverts the splines in coordinate order.

mod made;
mod spline;
mod train;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::LN_2PI;
use crate::proposal::{ProposalError, ProposalKernel};

pub use made::Made;
pub use spline::{Knots, MIN_BIN};
pub use train::{train_flow, AdamState, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub bins: usize,
    pub tail_bound: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub min_derivative: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            tail_bound: 10.0,
            hidden: 20,
            blocks: 2,
            min_derivative: 1e-3,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            max_epochs: 400,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub bins: usize,
    pub tail_bound: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub min_derivative: f64,
}

/// JSON form: architecture header, standardiser and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub architecture: Architecture,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SplineFlow {
    arch: Architecture,
    made: Made,
    phi: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl SplineFlow {
    /// Identity-initialised flow: random hidden weights, zero output layer.
    pub fn new(dim: usize, cfg: &FlowConfig, rng: &mut dyn RngCore) -> Self {
        let arch = Architecture {
            dim,
            bins: cfg.bins,
            tail_bound: cfg.tail_bound,
            hidden: cfg.hidden,
            blocks: cfg.blocks,
            min_derivative: cfg.min_derivative,
        };
        let made = Made::new(dim, cfg.hidden, cfg.blocks, spline::n_raw(cfg.bins));
        let phi = made.init(rng);
        Self { arch, made, phi, shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn set_phi(&mut self, phi: Vec<f64>) {
        assert_eq!(phi.len(), self.phi.len(), "parameter length mismatch");
        self.phi = phi;
        self.made.apply_mask(&mut self.phi);
    }

    pub fn n_params(&self) -> usize {
        self.phi.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn set_standardiser(&mut self, shift: Vec<f64>, scale: Vec<f64>) {
        assert!(scale.iter().all(|s| *s > 0.0 && s.is_finite()));
        self.shift = shift;
        self.scale = scale;
    }

    /// Mean and per-coordinate standard deviation of `thetas`.
    pub fn standardise_from(&mut self, thetas: &[Vec<f64>]) -> Result<(), ProposalError> {
        if thetas.len() < 2 {
            return Err(ProposalError::InsufficientData { needed: 2, got: thetas.len() });
        }
        let mean = crate::linalg::mean(thetas);
        let n = thetas.len() as f64;
        let scale: Vec<f64> = (0..self.dim())
            .map(|d| {
                let v = thetas.iter().map(|t| (t[d] - mean[d]).powi(2)).sum::<f64>() / (n - 1.0);
                v.sqrt()
            })
            .collect();
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(ProposalError::DegenerateTrainingSet(
                "a coordinate has zero spread".into(),
            ));
        }
        self.shift = mean;
        self.scale = scale;
        Ok(())
    }

    fn knots(&self, out: &[f64], d: usize) -> Knots {
        let k = self.made.out_per;
        Knots::new(
            &out[d * k..(d + 1) * k],
            self.arch.bins,
            self.arch.tail_bound,
            self.arch.min_derivative,
        )
    }

    fn log_scale(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }

    fn standardise(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.shift).zip(&self.scale).map(|((t, m), s)| (t - m) / s).collect()
    }

    /// `theta -> (z, log |d z / d theta|)`.
    pub fn inverse(&self, theta: &[f64]) -> (Vec<f64>, f64) {
        let x = self.standardise(theta);
        let mut cache = made::Cache::default();
        let out = self.made.forward(&self.phi, &x, &mut cache);
        let mut ld = -self.log_scale();
        let z = (0..self.dim())
            .map(|d| {
                let (z, lg) = self.knots(&out, d).forward(x[d]);
                ld += lg;
                z
            })
            .collect();
        (z, ld)
    }

    /// `z -> (theta, log |d theta / d z|)`, inverting coordinates in order.
    pub fn forward(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let dim = self.dim();
        let mut x = vec![0.0; dim];
        let mut cache = made::Cache::default();
        let mut ld = self.log_scale();
        for d in 0..dim {
            let out = self.made.forward(&self.phi, &x, &mut cache);
            let (xd, lg) = self.knots(&out, d).inverse(z[d]);
            x[d] = xd;
            ld -= lg;
        }
        let theta = x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| m + s * v).collect();
        (theta, ld)
    }

    pub fn logpdf(&self, theta: &[f64]) -> f64 {
        let (z, ld) = self.inverse(theta);
        base_logpdf(&z) + ld
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.forward(&z).0
    }

    /// Summed log-density over `thetas` and its gradient in the flat
    /// parameters.
    pub fn objective_and_gradient(&self, thetas: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let dim = self.dim();
        let k = self.made.out_per;
        let mut grad = vec![0.0; self.phi.len()];
        let mut total = 0.0;
        let mut cache = made::Cache::default();
        let mut g_out = vec![0.0; dim * k];
        let const_term = -0.5 * dim as f64 * LN_2PI - self.log_scale();
        for t in thetas {
            let x = self.standardise(t);
            let out = self.made.forward(&self.phi, &x, &mut cache);
            g_out.iter_mut().for_each(|g| *g = 0.0);
            let mut lp = const_term;
            for d in 0..dim {
                let kn = self.knots(&out, d);
                let (z, _) = kn.forward(x[d]);
                let (_, lg) = kn.forward_grad(x[d], -z, 1.0, &mut g_out[d * k..(d + 1) * k]);
                lp += -0.5 * z * z + lg;
            }
            total += lp;
            self.made.backward(&self.phi, &cache, &g_out, &mut grad);
        }
        self.made.apply_mask(&mut grad);
        (total, grad)
    }

    pub fn snapshot(&self) -> FlowSnapshot {
        FlowSnapshot {
            architecture: self.arch.clone(),
            shift: self.shift.clone(),
            scale: self.scale.clone(),
            phi: self.phi.clone(),
        }
    }

    pub fn from_snapshot(s: &FlowSnapshot) -> Result<Self, ProposalError> {
        let a = &s.architecture;
        let made = Made::new(a.dim, a.hidden, a.blocks, spline::n_raw(a.bins));
        if made.n_params() != s.phi.len() || s.shift.len() != a.dim || s.scale.len() != a.dim {
            return Err(ProposalError::InvalidProposal("flow snapshot does not match its header".into()));
        }
        Ok(Self { arch: a.clone(), made, phi: s.phi.clone(), shift: s.shift.clone(), scale: s.scale.clone() })
    }
}

fn base_logpdf(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v + LN_2PI).sum::<f64>()
}

impl ProposalKernel for SplineFlow {
    fn propose(&self, _current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample(rng)
    }

    fn logpdf(&self, proposed: &[f64], _current: &[f64]) -> f64 {
        SplineFlow::logpdf(self, proposed)
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.arch.dim
    }
}
