//! ABC-SMC drivers: adaptive thresholds, systematic resampling, proposal
//! refits and one ABC-MCMC sweep per iteration.

mod fit;
mod resample;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{train_flow, SplineFlow, MIN_BIN};
use crate::kernels::{kernel_step, Budget, KernelConfig, KernelError, KernelFamily, StepContext, StepOutcome};
use crate::model::{ModelError, ObservedTarget};
use crate::proposal::{FallbackDecision, ProposalError, ProposalKernel, TrainingMode, TrainingSet};
use crate::rng::{substream, tag};

pub use fit::{fit_proposal, FittedProposal, ProposalKind, ProposalSpec};
pub use resample::{
    choose_epsilon, equivalence_classes, indicator_weights, systematic_resample, unique_count,
    EpsilonChoice,
};

/// One `(theta, y)` pair; `dist` caches the distance to the observed summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: Vec<f64>,
    pub summary: Vec<f64>,
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationRole {
    Single,
    Train,
    Test,
}

impl PopulationRole {
    fn stream_tag(self) -> u64 {
        match self {
            PopulationRole::Single => 0,
            PopulationRole::Train => tag::TRAIN_POP,
            PopulationRole::Test => tag::TEST_POP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub role: PopulationRole,
    pub particles: Vec<Particle>,
}

/// Per-iteration statistics. The CSV form carries the first seven fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub t: usize,
    pub epsilon: f64,
    pub wall_clock_s: f64,
    /// Cumulative, including the prior initialisation.
    pub n_simulations: u64,
    pub accept_rate: f64,
    pub unique_after_resample: usize,
    pub proposal_fit_s: f64,
    /// No feasible threshold below the previous one; it was reused.
    #[serde(default)]
    pub stalled: bool,
    /// Threshold candidates per population (train first) for transport runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub population_epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<FallbackDecision>,
}

impl IterationTrace {
    pub const CSV_HEADER: [&'static str; 7] = [
        "t",
        "epsilon",
        "wall_clock_s",
        "n_simulations",
        "accept_rate",
        "unique_after_resample",
        "proposal_fit_s",
    ];

    pub fn csv_row(&self) -> [String; 7] {
        [
            self.t.to_string(),
            format!("{:e}", self.epsilon),
            format!("{}", self.wall_clock_s),
            self.n_simulations.to_string(),
            format!("{}", self.accept_rate),
            self.unique_after_resample.to_string(),
            format!("{}", self.proposal_fit_s),
        ]
    }
}

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("all resampling weights are zero")]
    AllZeroWeights,
    #[error("no feasible epsilon: need {needed} unique particles, best is {best}")]
    NoFeasibleEpsilon { needed: usize, best: usize },
    #[error("budget exhausted before the first iteration completed")]
    BudgetExhausted,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error("kernel: {0}")]
    Kernel(KernelError),
}

impl From<KernelError> for SmcError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Model(m) => SmcError::Model(m),
            other => SmcError::Kernel(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Population size of a single-population run.
    pub n_particles: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub omega: f64,
    /// `None` means no wall-clock limit.
    pub time_budget_s: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Stop once the threshold is at or below this value.
    pub target_epsilon: Option<f64>,
    pub training_mode: TrainingMode,
    pub kernel: KernelConfig,
    pub proposal: ProposalSpec,
    /// Worker threads for the sweep; 0 uses the global pool.
    pub workers: usize,
}

impl SmcConfig {
    pub fn new(kernel: KernelConfig, proposal: ProposalSpec) -> Self {
        Self {
            n_particles: 1000,
            n_train: 900,
            n_test: 100,
            omega: 0.5,
            time_budget_s: None,
            max_iterations: None,
            target_epsilon: None,
            training_mode: TrainingMode::WithinEpsilon,
            kernel,
            proposal,
            workers: 0,
        }
    }

    fn validate(&self, transport: bool) -> Result<(), SmcError> {
        let bad = |m: &str| Err(SmcError::InvalidConfig(m.to_string()));
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if let Some(b) = self.time_budget_s {
            if !(b >= 0.0) {
                return bad("time budget must be non-negative");
            }
        }
        if transport {
            if self.n_train < 2 || self.n_test < 2 {
                return bad("train and test populations need at least 2 particles");
            }
        } else {
            if self.n_particles < 2 {
                return bad("population needs at least 2 particles");
            }
            if self.proposal.is_flow() {
                return bad("flow proposals run through the transport driver");
            }
            if self.proposal.fallback {
                return bad("fallback needs the transport driver's test population");
            }
        }
        if self.kernel.family.requires_independence() && !self.proposal.is_independence() {
            return bad("this kernel family needs an independence proposal");
        }
        if matches!(self.kernel.family, KernelFamily::RHitSingle | KernelFamily::RHitMulti) && self.kernel.r < 2 {
            return bad("r-hit kernels need r >= 2");
        }
        if let ProposalKind::Flow(f) = &self.proposal.kind {
            if f.bins == 0 || f.bins as f64 * MIN_BIN >= 1.0 {
                return bad("flow bins must be between 1 and 999");
            }
            if !(f.tail_bound > 0.0) || f.hidden == 0 || f.batch_size == 0 || !(f.learning_rate > 0.0) {
                return bad("flow tail_bound, hidden, batch_size and learning_rate must be positive");
            }
        }
        if let Some(eta) = self.proposal.defensive_eta {
            if !self.proposal.is_independence() || !(0.0..=1.0).contains(&eta) {
                return bad("defensive wrapping needs an independence proposal and eta in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TimeBudget,
    MaxIterations,
    TargetEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcOutput {
    pub traces: Vec<IterationTrace>,
    /// The reported sample: the single population, or the train one.
    pub population: Vec<Particle>,
    pub test_population: Option<Vec<Particle>>,
    pub final_epsilon: f64,
    pub completed_iterations: usize,
    pub elapsed_s: f64,
    pub stop_reason: StopReason,
}

impl SmcOutput {
    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.population.iter().map(|p| p.theta.clone()).collect()
    }
}

/// One kernel step; swap in a double to test the driver in isolation.
pub type StepFn<'a> =
    dyn Fn(&StepContext<'_>, &Particle, &mut dyn RngCore) -> Result<StepOutcome, KernelError> + Sync + 'a;

/// What an observer sees after each completed iteration.
pub struct IterationView<'a> {
    pub t: usize,
    pub epsilon: f64,
    pub resampled: &'a [Population],
    pub swept: &'a [Population],
}

pub type Observer<'a> = dyn FnMut(&IterationView<'_>) + 'a;

/// Single-population ABC-SMC.
pub fn run_abc_smc(target: &ObservedTarget, cfg: &SmcConfig, seed: u64) -> Result<SmcOutput, SmcError> {
    cfg.validate(false)?;
    let kernel = cfg.kernel;
    let step = move |ctx: &StepContext<'_>, p: &Particle, rng: &mut dyn RngCore| kernel_step(&kernel, *ctx, p, rng);
    drive(target, cfg, seed, false, &step, None)
}

/// ABC-SMC with separate train and test populations; the proposal is fitted
/// on the train particles with the test particles scoring it.
pub fn run_transport_abc(target: &ObservedTarget, cfg: &SmcConfig, seed: u64) -> Result<SmcOutput, SmcError> {
    cfg.validate(true)?;
    let kernel = cfg.kernel;
    let step = move |ctx: &StepContext<'_>, p: &Particle, rng: &mut dyn RngCore| kernel_step(&kernel, *ctx, p, rng);
    drive(target, cfg, seed, true, &step, None)
}

/// Driver with an injectable step and an optional per-iteration observer.
pub fn run_with_step(
    target: &ObservedTarget,
    cfg: &SmcConfig,
    seed: u64,
    transport: bool,
    step: &StepFn<'_>,
    observer: Option<&mut Observer<'_>>,
) -> Result<SmcOutput, SmcError> {
    cfg.validate(transport)?;
    drive(target, cfg, seed, transport, step, observer)
}

fn thread_pool(workers: usize) -> Result<Option<rayon::ThreadPool>, SmcError> {
    if workers == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| SmcError::InvalidConfig(format!("thread pool: {e}")))
}

fn in_pool<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn expired(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

/// Prior draws for one population; `None` when the deadline passes.
fn initialise(
    target: &ObservedTarget,
    role: PopulationRole,
    n: usize,
    seed: u64,
    deadline: Option<Instant>,
) -> Result<Option<Population>, SmcError> {
    let model = &target.model;
    let drawn: Vec<Option<Result<Particle, ModelError>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if expired(deadline) {
                return None;
            }
            let mut rng = substream(seed, &[tag::INIT, role.stream_tag(), i as u64]);
            let theta = model.prior_sample(&mut rng);
            Some(model.simulate_summary(&theta, &mut rng).map(|summary| {
                let dist = target.distance(&summary);
                Particle { theta, summary, dist }
            }))
        })
        .collect();
    let mut particles = Vec::with_capacity(n);
    for d in drawn {
        match d {
            None => return Ok(None),
            Some(r) => particles.push(r?),
        }
    }
    Ok(Some(Population { role, particles }))
}

enum Sweep {
    Done { pop: Population, accepted: usize, sims: u64 },
    Deadline,
}

fn sweep(
    pop: &Population,
    ctx: &StepContext<'_>,
    step: &StepFn<'_>,
    seed: u64,
    t: usize,
) -> Result<Sweep, SmcError> {
    let tag_pop = pop.role.stream_tag();
    let results: Vec<Result<StepOutcome, KernelError>> = pop
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = substream(seed, &[tag::SWEEP, t as u64, tag_pop, i as u64]);
            step(ctx, p, &mut rng)
        })
        .collect();
    let mut particles = Vec::with_capacity(results.len());
    let (mut accepted, mut sims) = (0usize, 0u64);
    for r in results {
        match r {
            Ok(o) => {
                accepted += usize::from(o.accepted);
                sims += o.n_sims;
                particles.push(o.particle);
            }
            Err(KernelError::DeadlineExceeded { .. }) => return Ok(Sweep::Deadline),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Sweep::Done { pop: Population { role: pop.role, particles }, accepted, sims })
}

fn drive(
    target: &ObservedTarget,
    cfg: &SmcConfig,
    seed: u64,
    transport: bool,
    step: &StepFn<'_>,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<SmcOutput, SmcError> {
    let start = Instant::now();
    let deadline = cfg.time_budget_s.map(|s| start + Duration::from_secs_f64(s));
    let budget = Budget { deadline, max_sims: None };
    let pool = thread_pool(cfg.workers)?;

    let roles: Vec<(PopulationRole, usize)> = if transport {
        vec![(PopulationRole::Train, cfg.n_train), (PopulationRole::Test, cfg.n_test)]
    } else {
        vec![(PopulationRole::Single, cfg.n_particles)]
    };
    if expired(deadline) {
        return Err(SmcError::BudgetExhausted);
    }
    let mut pops = Vec::with_capacity(roles.len());
    for (role, n) in &roles {
        match in_pool(&pool, || initialise(target, *role, *n, seed, deadline))? {
            Some(p) => pops.push(p),
            None => return Err(SmcError::BudgetExhausted),
        }
    }
    let mut n_sims: u64 = roles.iter().map(|(_, n)| *n as u64).sum();
    let n_total: usize = roles.iter().map(|(_, n)| n).sum();

    let mut flow: Option<SplineFlow> = None;
    let mut prev = f64::INFINITY;
    let mut traces: Vec<IterationTrace> = Vec::new();
    let stop_reason;
    let mut t = 0usize;

    loop {
        if cfg.max_iterations.is_some_and(|m| traces.len() >= m) {
            stop_reason = StopReason::MaxIterations;
            break;
        }
        if cfg.target_epsilon.is_some_and(|e| prev <= e) {
            stop_reason = StopReason::TargetEpsilon;
            break;
        }
        if expired(deadline) {
            stop_reason = StopReason::TimeBudget;
            break;
        }
        t += 1;

        // threshold: largest per-population candidate, each with its own fixed draw
        let draws: Vec<f64> = pops
            .iter()
            .map(|p| substream(seed, &[tag::RESAMPLE, t as u64, p.role.stream_tag()]).random::<f64>())
            .collect();
        let mut candidates = Vec::with_capacity(pops.len());
        let mut stalled = false;
        for (p, u) in pops.iter().zip(&draws) {
            match choose_epsilon(&p.particles, prev, cfg.omega, *u) {
                Ok(c) => candidates.push(c.epsilon),
                Err(SmcError::NoFeasibleEpsilon { .. }) if prev.is_finite() => {
                    stalled = true;
                    candidates.push(prev);
                }
                Err(e) => return Err(e),
            }
        }
        let epsilon = if stalled { prev } else { candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max) };

        let mut resampled = Vec::with_capacity(pops.len());
        let mut unique_primary = 0;
        for (k, (p, u)) in pops.iter().zip(&draws).enumerate() {
            let w = indicator_weights(&p.particles, epsilon);
            let idx = systematic_resample(&w, p.particles.len(), *u)?;
            if k == 0 {
                unique_primary = unique_count(&idx, &equivalence_classes(&p.particles));
            }
            resampled.push(Population {
                role: p.role,
                particles: idx.iter().map(|&i| p.particles[i].clone()).collect(),
            });
        }

        // proposal fit on the pre-resample particles inside the new ball
        let fit_start = Instant::now();
        let train = TrainingSet::from_particles(&pops[0].particles, epsilon, cfg.training_mode);
        let test = pops.get(1).map(|p| TrainingSet::from_particles(&p.particles, epsilon, cfg.training_mode));
        let mut fit_rng = substream(seed, &[tag::FIT, t as u64]);
        if let (ProposalKind::Flow(fcfg), None, true) = (&cfg.proposal.kind, &flow, transport) {
            // first iteration: start from a flow fitted to the prior draws
            let prior_train: Vec<Vec<f64>> = pops[0].particles.iter().map(|p| p.theta.clone()).collect();
            let prior_test: Vec<Vec<f64>> = pops[1].particles.iter().map(|p| p.theta.clone()).collect();
            let fresh = SplineFlow::new(target.model.dim_theta(), fcfg, &mut fit_rng);
            flow = match train_flow(&fresh, &prior_train, &prior_test, fcfg, &mut fit_rng) {
                Ok((f, _)) => Some(f),
                Err(ProposalError::TrainingDiverged(_)) if cfg.proposal.fallback => Some(fresh),
                Err(e) => return Err(e.into()),
            };
        }
        let fitted = fit_proposal(&cfg.proposal, target, &train, test.as_ref(), flow.as_ref(), &mut fit_rng)?;
        if fitted.flow.is_some() {
            flow = fitted.flow.clone();
        }
        let proposal_fit_s = fit_start.elapsed().as_secs_f64();
        if expired(deadline) {
            stop_reason = StopReason::TimeBudget;
            break;
        }

        let kernel: Arc<dyn ProposalKernel> = fitted.kernel;
        let ctx = StepContext { target, proposal: kernel.as_ref(), epsilon, budget: &budget };
        let mut swept = Vec::with_capacity(resampled.len());
        let (mut accepted, mut iter_sims) = (0usize, 0u64);
        let mut hit_deadline = false;
        for p in &resampled {
            match in_pool(&pool, || sweep(p, &ctx, step, seed, t))? {
                Sweep::Done { pop, accepted: a, sims } => {
                    accepted += a;
                    iter_sims += sims;
                    swept.push(pop);
                }
                Sweep::Deadline => {
                    hit_deadline = true;
                    break;
                }
            }
        }
        if hit_deadline {
            stop_reason = StopReason::TimeBudget;
            break;
        }
        n_sims += iter_sims;

        if let Some(obs) = observer.as_deref_mut() {
            obs(&IterationView { t, epsilon, resampled: &resampled, swept: &swept });
        }
        traces.push(IterationTrace {
            t,
            epsilon,
            wall_clock_s: start.elapsed().as_secs_f64(),
            n_simulations: n_sims,
            accept_rate: accepted as f64 / n_total as f64,
            unique_after_resample: unique_primary,
            proposal_fit_s,
            stalled,
            population_epsilons: if transport { candidates } else { Vec::new() },
            fallback: fitted.fallback,
        });
        pops = swept;
        prev = epsilon;
    }

    if traces.is_empty() {
        return Err(SmcError::BudgetExhausted);
    }
    let mut it = pops.into_iter();
    let population = it.next().map(|p| p.particles).unwrap_or_default();
    let test_population = it.next().map(|p| p.particles);
    Ok(SmcOutput {
        completed_iterations: traces.len(),
        final_epsilon: prev,
        traces,
        population,
        test_population,
        elapsed_s: start.elapsed().as_secs_f64(),
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use crate::model::builtin_target;
    use crate::proposal::MixtureComponents;

    fn quick(kind: ProposalKind, family: KernelFamily, n: usize) -> SmcConfig {
        let mut cfg = SmcConfig::new(KernelConfig::new(family), ProposalSpec::new(kind));
        cfg.n_particles = n;
        cfg.n_train = n;
        cfg.n_test = n / 4;
        cfg.max_iterations = Some(4);
        cfg.workers = 1;
        cfg
    }

    #[test]
    fn zero_budget_is_an_error() {
        let target = builtin_target("quadratic").unwrap();
        let mut cfg = quick(ProposalKind::ClassicRw, KernelFamily::AbcMh, 50);
        cfg.time_budget_s = Some(0.0);
        assert!(matches!(run_abc_smc(&target, &cfg, 1), Err(SmcError::BudgetExhausted)));
    }

    #[test]
    fn identity_kernel_keeps_the_resampled_multiset() {
        let target = builtin_target("quadratic").unwrap();
        let cfg = quick(ProposalKind::ClassicRw, KernelFamily::AbcMh, 100);
        let identity = |_: &StepContext<'_>, p: &Particle, _: &mut dyn RngCore| {
            Ok(StepOutcome { particle: p.clone(), accepted: false, n_sims: 0, n_proposals: 0 })
        };
        let mut checked = 0;
        let mut obs = |v: &IterationView<'_>| {
            assert_eq!(v.resampled, v.swept);
            checked += 1;
        };
        let out = run_with_step(&target, &cfg, 3, false, &identity, Some(&mut obs)).unwrap();
        assert_eq!(checked, out.completed_iterations);
    }

    #[test]
    fn thresholds_fall_and_survivors_stay_inside() {
        let target = builtin_target("quadratic").unwrap();
        let cfg = quick(ProposalKind::Mixture(MixtureComponents::Fixed(2)), KernelFamily::OneHit, 200);
        let mut last = f64::INFINITY;
        let mut obs = |v: &IterationView<'_>| {
            assert!(v.epsilon < last);
            last = v.epsilon;
            for p in &v.swept[0].particles {
                assert!(p.dist <= v.epsilon);
            }
        };
        let out = run_with_step(
            &target,
            &cfg,
            5,
            false,
            &|c: &StepContext<'_>, p: &Particle, r: &mut dyn RngCore| kernel_step(&cfg.kernel, *c, p, r),
            Some(&mut obs),
        )
        .unwrap();
        assert_eq!(out.completed_iterations, 4);
        for tr in &out.traces {
            assert!(tr.unique_after_resample >= 100);
        }
    }

    #[test]
    fn flow_needs_the_transport_driver() {
        let target = builtin_target("quadratic").unwrap();
        let cfg = quick(ProposalKind::Flow(Default::default()), KernelFamily::AbcMh, 50);
        assert!(matches!(run_abc_smc(&target, &cfg, 1), Err(SmcError::InvalidConfig(_))));
    }

    #[test]
    fn transport_threshold_covers_both_populations() {
        let target = builtin_target("gm").unwrap();
        let mut cfg = quick(ProposalKind::ClassicIndependence, KernelFamily::IndOneHit, 120);
        cfg.max_iterations = Some(3);
        let out = run_transport_abc(&target, &cfg, 9).unwrap();
        assert_eq!(out.population.len(), 120);
        assert_eq!(out.test_population.as_ref().map(Vec::len), Some(30));
        for tr in &out.traces {
            for c in &tr.population_epsilons {
                assert!(tr.epsilon >= *c);
            }
        }
    }
}
