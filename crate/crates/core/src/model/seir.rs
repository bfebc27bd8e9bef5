use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};

use super::{Model, ModelError};
use crate::linalg::normal_logpdf;

pub const SEIR_POPULATION: u64 = 1000;
/// `(log alpha, log beta, log gamma)` used to generate the shipped observations.
pub const SEIR_TRUE_THETA: [f64; 3] = [-0.5, -1.0, -3.0];

const S0: u64 = 990;
const E0: u64 = 10;
const BACKGROUND_RATE: f64 = 0.1;
const OBSERVATION_RATE: f64 = 0.5;
const PRIOR_SD: f64 = 2.0;

/// Discrete-time stochastic SEIR with binomial transitions and Poisson
/// reported cases. `theta = (log alpha, log beta, log gamma)`; the prior is
/// independent normal with sd 2 around [`SEIR_TRUE_THETA`].
#[derive(Debug, Clone, Copy)]
pub struct Seir {
    horizon: usize,
}

/// Full compartment history, indexed `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeirTrajectory {
    pub s: Vec<u64>,
    pub e: Vec<u64>,
    pub i: Vec<u64>,
    pub r: Vec<u64>,
    pub new_infectious: Vec<u64>,
    pub reported: Vec<f64>,
}

/// `1 - exp(-rate)`, robust to infinite and zero rates.
fn transition_prob(rate: f64) -> f64 {
    if rate.is_nan() || rate <= 0.0 {
        0.0
    } else {
        (-(-rate).exp_m1()).clamp(0.0, 1.0)
    }
}

fn binomial(n: u64, p: f64, rng: &mut dyn RngCore) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

impl Seir {
    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn simulate_trajectory(&self, theta: &[f64], rng: &mut dyn RngCore) -> SeirTrajectory {
        let alpha = theta[0].exp();
        let beta = theta[1].exp();
        let gamma = theta[2].exp();
        let p_ei = transition_prob(alpha);
        let p_ir = transition_prob(gamma);
        let n = SEIR_POPULATION as f64;
        let len = self.horizon + 1;
        let mut tr = SeirTrajectory {
            s: Vec::with_capacity(len),
            e: Vec::with_capacity(len),
            i: Vec::with_capacity(len),
            r: Vec::with_capacity(len),
            new_infectious: Vec::with_capacity(len),
            reported: Vec::with_capacity(len),
        };
        let (mut s, mut e, mut i, mut r) = (S0, E0, 0u64, 0u64);
        tr.s.push(s);
        tr.e.push(e);
        tr.i.push(i);
        tr.r.push(r);
        tr.new_infectious.push(0);
        tr.reported.push(poisson(BACKGROUND_RATE, rng));
        for _ in 1..len {
            let p_se = if i == 0 { 0.0 } else { transition_prob(beta * i as f64 / n) };
            let new_exposed = binomial(s, p_se, rng);
            let new_infectious = binomial(e, p_ei, rng);
            let new_recovered = binomial(i, p_ir, rng);
            s -= new_exposed;
            e = e + new_exposed - new_infectious;
            i = i + new_infectious - new_recovered;
            r += new_recovered;
            tr.s.push(s);
            tr.e.push(e);
            tr.i.push(i);
            tr.r.push(r);
            tr.new_infectious.push(new_infectious);
            let rate = BACKGROUND_RATE + OBSERVATION_RATE * new_infectious as f64;
            tr.reported.push(poisson(rate, rng));
        }
        tr
    }
}

fn poisson(rate: f64, rng: &mut dyn RngCore) -> f64 {
    Poisson::new(rate).expect("positive rate").sample(rng)
}

impl Model for Seir {
    fn name(&self) -> &str {
        "seir"
    }

    fn dim_theta(&self) -> usize {
        3
    }

    fn dim_summary(&self) -> usize {
        self.horizon + 1
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        SEIR_TRUE_THETA
            .iter()
            .map(|m| m + PRIOR_SD * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(SEIR_TRUE_THETA).map(|(&t, m)| normal_logpdf(t, m, PRIOR_SD)).sum()
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        Ok(self.simulate_trajectory(theta, rng).reported)
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }
}
