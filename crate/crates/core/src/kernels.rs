//! ABC-MCMC kernel families. Each step maps a particle inside the
//! acceptance ball to a new particle inside the ball and leaves the joint
//! ABC target `pi(theta) f(y | theta) 1[d(y, y0) <= eps]` invariant.
//!
//! Random draws happen in a fixed order per family (documented on each
//! step function) so a step is a pure function of its inputs and stream.
//!
//! Proposed parameters outside the prior support are never simulated.
//! For the MH-gated families the gate rejects them. For the loop-based
//! families they count as proposals that miss, which is the same kernel
//! as simulating from a model whose hit probability is zero off-support;
//! the target is unchanged because the prior vanishes there.

use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ObservedTarget};
use crate::proposal::ProposalKernel;
use crate::smc::Particle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    AbcMh,
    OneHit,
    RHitSingle,
    RHitMulti,
    IndOneHit,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] =
        [Self::AbcMh, Self::OneHit, Self::RHitSingle, Self::RHitMulti, Self::IndOneHit];

    pub fn label(self) -> &'static str {
        match self {
            Self::AbcMh => "abc_mh",
            Self::OneHit => "one_hit",
            Self::RHitSingle => "r_hit_single",
            Self::RHitMulti => "r_hit_multi",
            Self::IndOneHit => "ind_one_hit",
        }
    }

    pub fn requires_independence(self) -> bool {
        self == Self::IndOneHit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Hits required by the r-hit families.
    pub r: usize,
}

impl KernelConfig {
    pub fn new(family: KernelFamily) -> Self {
        Self { family, r: 2 }
    }
}

/// Limits checked before every simulator call.
#[derive(Debug, Clone, Copy, Default)]
pub struct Budget {
    pub deadline: Option<Instant>,
    /// Per-step simulation cap, used to censor unbounded loops.
    pub max_sims: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn until(deadline: Instant) -> Self {
        Self { deadline: Some(deadline), max_sims: None }
    }

    pub fn with_max_sims(mut self, cap: u64) -> Self {
        self.max_sims = Some(cap);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("deadline exceeded after {n_sims} simulations")]
    DeadlineExceeded { n_sims: u64 },
    #[error("simulation cap reached after {n_sims} simulations")]
    SimulationCap { n_sims: u64 },
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub particle: Particle,
    pub accepted: bool,
    pub n_sims: u64,
    pub n_proposals: u64,
}

/// Everything a step reads besides the particle and its stream.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub target: &'a ObservedTarget,
    pub proposal: &'a dyn ProposalKernel,
    pub epsilon: f64,
    pub budget: &'a Budget,
}

/// `log [pi(new) q(old | new) / (pi(old) q(new | old))]`; `-inf` when
/// `new` is outside the prior support or the ratio is undefined.
pub fn log_mh_ratio(
    target: &ObservedTarget,
    q: &dyn ProposalKernel,
    new: &[f64],
    old: &[f64],
) -> f64 {
    let lp_new = target.model.prior_logpdf(new);
    if lp_new == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lp_old = target.model.prior_logpdf(old);
    debug_assert!(lp_old.is_finite(), "current particle outside the prior support");
    let r = lp_new + q.logpdf(old, new) - lp_old - q.logpdf(new, old);
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// `min(1, alpha)` from a log ratio.
pub fn acceptance_probability(log_alpha: f64) -> f64 {
    log_alpha.min(0.0).exp()
}

/// One uniform draw decides; `u < min(1, alpha)`.
fn accept(log_alpha: f64, rng: &mut dyn RngCore) -> bool {
    let u: f64 = rng.random();
    u < acceptance_probability(log_alpha)
}

struct Sim<'a> {
    ctx: StepContext<'a>,
    n_sims: u64,
    n_proposals: u64,
}

impl<'a> Sim<'a> {
    fn new(ctx: StepContext<'a>) -> Self {
        Self { ctx, n_sims: 0, n_proposals: 0 }
    }

    fn propose(&mut self, from: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.n_proposals += 1;
        self.ctx.proposal.propose(from, rng)
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        self.ctx.target.model.prior_logpdf(theta) > f64::NEG_INFINITY
    }

    /// Polls the budget, then simulates once.
    fn run(&mut self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Particle, KernelError> {
        if let Some(d) = self.ctx.budget.deadline {
            if Instant::now() >= d {
                return Err(KernelError::DeadlineExceeded { n_sims: self.n_sims });
            }
        }
        if let Some(cap) = self.ctx.budget.max_sims {
            if self.n_sims >= cap {
                return Err(KernelError::SimulationCap { n_sims: self.n_sims });
            }
        }
        self.n_sims += 1;
        let summary = self.ctx.target.model.simulate_summary(theta, rng)?;
        let dist = self.ctx.target.distance(&summary);
        Ok(Particle { theta: theta.to_vec(), summary, dist })
    }

    fn hit(&self, p: &Particle) -> bool {
        p.dist <= self.ctx.epsilon
    }

    fn finish(self, particle: Particle, accepted: bool) -> StepOutcome {
        StepOutcome { particle, accepted, n_sims: self.n_sims, n_proposals: self.n_proposals }
    }
}

/// Dispatches on the family.
pub fn kernel_step(
    cfg: &KernelConfig,
    ctx: StepContext<'_>,
    p: &Particle,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    match cfg.family {
        KernelFamily::AbcMh => abc_mh_step(ctx, p, rng),
        KernelFamily::OneHit => one_hit_step(ctx, p, rng),
        KernelFamily::RHitSingle => r_hit_single_step(ctx, p, cfg.r, rng),
        KernelFamily::RHitMulti => r_hit_multi_step(ctx, p, cfg.r, rng),
        KernelFamily::IndOneHit => ind_one_hit_step(ctx, p, rng),
    }
}

/// Draws: proposal, gate uniform, one simulation.
pub fn abc_mh_step(
    ctx: StepContext<'_>,
    p: &Particle,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    let mut s = Sim::new(ctx);
    let theta_new = s.propose(&p.theta, rng);
    let la = log_mh_ratio(ctx.target, ctx.proposal, &theta_new, &p.theta);
    if !accept(la, rng) {
        return Ok(s.finish(p.clone(), false));
    }
    let cand = s.run(&theta_new, rng)?;
    if s.hit(&cand) {
        Ok(s.finish(cand, true))
    } else {
        Ok(s.finish(p.clone(), false))
    }
}

/// Draws: proposal, gate uniform, then alternating simulations under the
/// proposed and current parameters.
pub fn one_hit_step(
    ctx: StepContext<'_>,
    p: &Particle,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    let mut s = Sim::new(ctx);
    let theta_new = s.propose(&p.theta, rng);
    let la = log_mh_ratio(ctx.target, ctx.proposal, &theta_new, &p.theta);
    if !accept(la, rng) {
        return Ok(s.finish(p.clone(), false));
    }
    loop {
        let cand = s.run(&theta_new, rng)?;
        if s.hit(&cand) {
            return Ok(s.finish(cand, true));
        }
        let other = s.run(&p.theta, rng)?;
        if s.hit(&other) {
            return Ok(s.finish(p.clone(), false));
        }
    }
}

/// Draws: proposal, simulations under it until `r` hits, the index of the
/// kept hit, simulations under the current parameter until `r - 1` hits,
/// then the acceptance uniform.
pub fn r_hit_single_step(
    ctx: StepContext<'_>,
    p: &Particle,
    r: usize,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    assert!(r >= 2, "r-hit kernels need r >= 2");
    let mut s = Sim::new(ctx);
    let theta_new = s.propose(&p.theta, rng);
    let ratio = log_mh_ratio(ctx.target, ctx.proposal, &theta_new, &p.theta);
    if ratio == f64::NEG_INFINITY {
        // alpha is zero whatever the counts turn out to be
        return Ok(s.finish(p.clone(), false));
    }
    let mut hits = Vec::with_capacity(r);
    let mut n1 = 0u64;
    while hits.len() < r {
        n1 += 1;
        let cand = s.run(&theta_new, rng)?;
        if s.hit(&cand) {
            hits.push(cand);
        }
    }
    let star = hits.swap_remove(rng.random_range(0..r));
    let mut n2 = 0u64;
    let mut m2 = 0;
    while m2 < r - 1 {
        n2 += 1;
        let other = s.run(&p.theta, rng)?;
        if s.hit(&other) {
            m2 += 1;
        }
    }
    let la = ratio + (n2 as f64).ln() - ((n1 - 1) as f64).ln();
    if accept(la, rng) {
        Ok(s.finish(star, true))
    } else {
        Ok(s.finish(p.clone(), false))
    }
}

/// Draws: a fresh proposal from the current parameter before every
/// first-stage simulation until `r` hits, the index of the kept hit, a
/// fresh proposal from the kept parameter before every second-stage
/// simulation until `r - 1` hits, then the acceptance uniform.
pub fn r_hit_multi_step(
    ctx: StepContext<'_>,
    p: &Particle,
    r: usize,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    assert!(r >= 2, "r-hit kernels need r >= 2");
    let mut s = Sim::new(ctx);
    let mut hits = Vec::with_capacity(r);
    let mut n1 = 0u64;
    while hits.len() < r {
        n1 += 1;
        let theta_new = s.propose(&p.theta, rng);
        if !s.in_support(&theta_new) {
            continue;
        }
        let cand = s.run(&theta_new, rng)?;
        if s.hit(&cand) {
            hits.push(cand);
        }
    }
    let star = hits.swap_remove(rng.random_range(0..r));
    let mut n2 = 0u64;
    let mut m2 = 0;
    while m2 < r - 1 {
        n2 += 1;
        let theta2 = s.propose(&star.theta, rng);
        if !s.in_support(&theta2) {
            continue;
        }
        let other = s.run(&theta2, rng)?;
        if s.hit(&other) {
            m2 += 1;
        }
    }
    let la = log_mh_ratio(ctx.target, ctx.proposal, &star.theta, &p.theta) + (n2 as f64).ln()
        - ((n1 - 1) as f64).ln();
    if accept(la, rng) {
        Ok(s.finish(star, true))
    } else {
        Ok(s.finish(p.clone(), false))
    }
}

/// Draws: repeated (proposal, simulation) pairs until a hit, then the
/// acceptance uniform. Never simulates at the current parameter.
pub fn ind_one_hit_step(
    ctx: StepContext<'_>,
    p: &Particle,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome, KernelError> {
    if !ctx.proposal.is_independence() {
        return Err(KernelError::InvalidProposal(
            "ind_one_hit requires an independence proposal".into(),
        ));
    }
    let mut s = Sim::new(ctx);
    let cand = loop {
        let theta_new = s.propose(&p.theta, rng);
        if !s.in_support(&theta_new) {
            continue;
        }
        let cand = s.run(&theta_new, rng)?;
        if s.hit(&cand) {
            break cand;
        }
    };
    let la = log_mh_ratio(ctx.target, ctx.proposal, &cand.theta, &p.theta);
    if accept(la, rng) {
        Ok(s.finish(cand, true))
    } else {
        Ok(s.finish(p.clone(), false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AtomProposal, DiscreteToy, RingWalk};
    use crate::rng::substream;
    use std::sync::Arc;

    fn toy(hit: Vec<f64>) -> ObservedTarget {
        ObservedTarget::new(Arc::new(DiscreteToy::new(hit)), vec![0.0]).unwrap()
    }

    fn start(a: f64) -> Particle {
        Particle { theta: vec![a], summary: vec![0.0], dist: 0.0 }
    }

    #[test]
    fn certain_hit_accepts_after_one_simulation() {
        let t = toy(vec![1.0, 1.0]);
        let q = AtomProposal { pmf: vec![0.5, 0.5] };
        let b = Budget::unlimited();
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        for seed in 0..50 {
            let out = one_hit_step(ctx, &start(0.0), &mut substream(seed, &[])).unwrap();
            assert!(out.accepted);
            assert_eq!(out.n_sims, 1);
        }
    }

    #[test]
    fn miss_then_hit_rejects_after_two() {
        // proposal always moves to atom 1, which never hits; atom 0 always hits
        let t = toy(vec![1.0, 0.0]);
        let q = AtomProposal { pmf: vec![0.0, 1.0] };
        let b = Budget::unlimited();
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        // gate: alpha = q(0)/q(1) = 0, so force it open with a symmetric walk
        let w = RingWalk { atoms: 2 };
        let ctx_w = StepContext { proposal: &w, ..ctx };
        let out = one_hit_step(ctx_w, &start(0.0), &mut substream(1, &[])).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.n_sims, 2);
        assert_eq!(out.particle, start(0.0));
    }

    #[test]
    fn gate_rejection_costs_no_simulation() {
        let t = toy(vec![0.5, 0.5, 0.5]);
        // proposal mass 1 on atom 2 from any state gives alpha = q(current)/q(2) = 0
        let q = AtomProposal { pmf: vec![0.0, 0.0, 1.0] };
        let b = Budget::unlimited();
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        for f in [abc_mh_step, one_hit_step] {
            let out = f(ctx, &start(0.0), &mut substream(2, &[])).unwrap();
            assert!(!out.accepted);
            assert_eq!(out.n_sims, 0);
        }
    }

    #[test]
    fn all_hits_give_two_r_minus_one_simulations() {
        let t = toy(vec![1.0, 1.0, 1.0]);
        let q = AtomProposal { pmf: vec![0.2, 0.3, 0.5] };
        let b = Budget::unlimited();
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        for r in 2..5 {
            let out = r_hit_multi_step(ctx, &start(1.0), r, &mut substream(r as u64, &[])).unwrap();
            assert_eq!(out.n_sims, 2 * r as u64 - 1);
            let out = r_hit_single_step(ctx, &start(1.0), r, &mut substream(r as u64, &[])).unwrap();
            assert_eq!(out.n_sims, 2 * r as u64 - 1);
        }
    }

    #[test]
    fn independence_family_refuses_random_walks() {
        let t = toy(vec![0.5, 0.5]);
        let w = RingWalk { atoms: 2 };
        let b = Budget::unlimited();
        let ctx = StepContext { target: &t, proposal: &w, epsilon: 0.5, budget: &b };
        assert!(matches!(
            ind_one_hit_step(ctx, &start(0.0), &mut substream(1, &[])),
            Err(KernelError::InvalidProposal(_))
        ));
    }

    #[test]
    fn expired_deadline_aborts_before_simulating() {
        let t = toy(vec![0.5, 0.5]);
        let q = AtomProposal { pmf: vec![0.5, 0.5] };
        let b = Budget::until(Instant::now());
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        assert!(matches!(
            ind_one_hit_step(ctx, &start(0.0), &mut substream(1, &[])),
            Err(KernelError::DeadlineExceeded { n_sims: 0 })
        ));
    }

    #[test]
    fn simulation_cap_censors_the_loop() {
        let t = toy(vec![0.0, 1.0]);
        let q = AtomProposal { pmf: vec![1.0, 0.0] };
        let b = Budget::unlimited().with_max_sims(25);
        let ctx = StepContext { target: &t, proposal: &q, epsilon: 0.5, budget: &b };
        assert!(matches!(
            ind_one_hit_step(ctx, &start(1.0), &mut substream(1, &[])),
            Err(KernelError::SimulationCap { n_sims: 25 })
        ));
    }
}
