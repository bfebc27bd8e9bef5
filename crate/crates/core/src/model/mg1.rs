use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp};

use super::{Model, ModelError};

/// Number of observed customers.
pub const MG1_CUSTOMERS: usize = 20;

const PERCENTILES: [f64; 5] = [0.0, 25.0, 50.0, 75.0, 100.0];

/// M/G/1 queue with `Exp(theta1)` inter-arrivals and `U(theta2, theta3)`
/// service times; only inter-departure times are observed.
///
/// Prior: `theta1 ~ U(0, 1/3)`, `theta2 ~ U(0, 10)`, `theta3 - theta2 ~ U(0, 10)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MG1Queue;

/// Inter-departure gaps for given arrival and service times, `d_0 = 0`.
pub fn departure_gaps(arrivals: &[f64], services: &[f64]) -> Vec<f64> {
    let mut prev = 0.0f64;
    arrivals
        .iter()
        .zip(services)
        .map(|(&a, &s)| {
            let d = prev.max(a) + s;
            let gap = d - prev;
            prev = d;
            gap
        })
        .collect()
}

/// Percentiles with linear interpolation between order statistics.
pub fn percentile_summary(values: &[f64], percentiles: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    percentiles
        .iter()
        .map(|p| {
            let pos = p / 100.0 * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

impl MG1Queue {
    fn check(theta: &[f64]) -> Result<(), ModelError> {
        let invalid = |reason: &str| ModelError::InvalidParameter {
            model: "mg1".into(),
            reason: reason.into(),
        };
        if !(theta[0] > 0.0) || !theta[0].is_finite() {
            return Err(invalid("arrival rate theta1 must be positive"));
        }
        if !(theta[1] <= theta[2]) {
            return Err(invalid("service bounds require theta2 <= theta3"));
        }
        Ok(())
    }
}

impl Model for MG1Queue {
    fn name(&self) -> &str {
        "mg1"
    }

    fn dim_theta(&self) -> usize {
        3
    }

    fn dim_summary(&self) -> usize {
        5
    }

    fn prior_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        // U(0, 1/3) excluding 0, so the arrival rate is always valid.
        let t1 = (1.0 - rng.random::<f64>()) / 3.0;
        let t2 = 10.0 * rng.random::<f64>();
        let t3 = t2 + 10.0 * rng.random::<f64>();
        vec![t1, t2, t3]
    }

    fn prior_logpdf(&self, theta: &[f64]) -> f64 {
        let gap = theta[2] - theta[1];
        let inside = theta[0] > 0.0
            && theta[0] <= 1.0 / 3.0
            && (0.0..=10.0).contains(&theta[1])
            && (0.0..=10.0).contains(&gap);
        if inside {
            3f64.ln() + 2.0 * 0.1f64.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn simulate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, ModelError> {
        Self::check(theta)?;
        let inter = Exp::new(theta[0]).map_err(|e| ModelError::InvalidParameter {
            model: "mg1".into(),
            reason: e.to_string(),
        })?;
        let mut arrivals = Vec::with_capacity(MG1_CUSTOMERS);
        let mut services = Vec::with_capacity(MG1_CUSTOMERS);
        let mut clock = 0.0;
        for _ in 0..MG1_CUSTOMERS {
            clock += inter.sample(rng);
            arrivals.push(clock);
            services.push(theta[1] + (theta[2] - theta[1]) * rng.random::<f64>());
        }
        Ok(departure_gaps(&arrivals, &services))
    }

    fn summarize(&self, raw: &[f64]) -> Vec<f64> {
        percentile_summary(raw, &PERCENTILES)
    }
}
