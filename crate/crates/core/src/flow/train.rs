use rand::seq::SliceRandom;
use rand::RngCore;

use super::{FlowConfig, SplineFlow};
use crate::proposal::ProposalError;

/// Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One ascent step along `grad`.
    pub fn ascend(&mut self, phi: &mut [f64], grad: &[f64], cfg: &FlowConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in phi.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p += cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    /// Mean test log-density before any update.
    pub initial_test: f64,
    pub best_test: f64,
    /// Mean test log-density after each epoch.
    pub test_trace: Vec<f64>,
}

fn mean_logpdf(flow: &SplineFlow, xs: &[Vec<f64>]) -> f64 {
    xs.iter().map(|x| flow.logpdf(x)).sum::<f64>() / xs.len() as f64
}

/// Maximises the summed log-density of `train` with Adam on shuffled
/// minibatches and returns the parameters with the best mean test
/// log-density. The standardiser is refitted on `train`; `flow`'s
/// parameters are the starting point.
pub fn train_flow(
    flow: &SplineFlow,
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    cfg: &FlowConfig,
    rng: &mut dyn RngCore,
) -> Result<(SplineFlow, TrainReport), ProposalError> {
    if test.is_empty() {
        return Err(ProposalError::InsufficientData { needed: 1, got: 0 });
    }
    let mut cur = flow.clone();
    cur.standardise_from(train)?;
    let initial = mean_logpdf(&cur, test);
    if initial.is_nan() {
        return Err(ProposalError::TrainingDiverged("initial test objective is NaN".into()));
    }
    let mut best = (initial, cur.phi().to_vec(), 0usize);
    let mut adam = AdamState::new(cur.n_params());
    let batch = cfg.batch_size.min(train.len()).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::new();
    let mut since = 0;
    let mut phi = cur.phi().to_vec();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (obj, mut grad) = cur.objective_and_gradient(&xs);
            if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ProposalError::TrainingDiverged(format!(
                    "non-finite training objective at epoch {epoch}"
                )));
            }
            let n = xs.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            adam.ascend(&mut phi, &grad, cfg);
            cur.set_phi(phi.clone());
        }
        let score = mean_logpdf(&cur, test);
        if score.is_nan() {
            return Err(ProposalError::TrainingDiverged(format!("NaN test objective at epoch {epoch}")));
        }
        trace.push(score);
        if score > best.0 {
            best = (score, phi.clone(), epoch);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let epochs = trace.len();
    cur.set_phi(best.1);
    Ok((
        cur,
        TrainReport { epochs, best_epoch: best.2, initial_test: initial, best_test: best.0, test_trace: trace },
    ))
}
