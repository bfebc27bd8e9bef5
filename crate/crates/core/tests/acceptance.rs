//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test --test acceptance -- 1 4 11`.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use abcsmc::diagnostics::{wasserstein, wasserstein_1d, wasserstein_simplex, WassersteinOrder};
use abcsmc::flow::{train_flow, FlowConfig, SplineFlow};
use abcsmc::harness::{execute, parse_experiment, RunRecord, RunSpec, RunStatus};
use abcsmc::kernels::{
    abc_mh_step, ind_one_hit_step, kernel_step, one_hit_step, Budget, KernelConfig, KernelError, KernelFamily,
    StepContext, StepOutcome,
};
use abcsmc::model::{
    builtin_target, AtomProposal, DiscreteToy, GaussianMixtureModel, GmExactPosterior, Model, ObservedTarget,
    Quadratic, RingWalk, Seir, GM_GRID_POINTS, SEIR_POPULATION,
};
use abcsmc::proposal::{
    defensive_wrap, fit_classic_independence, fit_gaussian_mixture_with, CovarianceStructure, EmOptions,
    ProposalKernel, TrainingMode, TrainingSet,
};
use abcsmc::rng::substream;
use abcsmc::smc::{
    choose_epsilon, run_abc_smc, systematic_resample, Particle, ProposalKind, ProposalSpec, SmcConfig, SmcError,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const HIT: [f64; 3] = [0.9, 0.5, 0.1];
const PMF: [f64; 3] = [0.2, 0.3, 0.5];

fn toy_target(hit: &[f64]) -> ObservedTarget {
    ObservedTarget::new(Arc::new(DiscreteToy::new(hit.to_vec())), vec![0.0]).unwrap()
}

fn atom(a: usize) -> Particle {
    Particle { theta: vec![a as f64], summary: vec![0.0], dist: 0.0 }
}

/// `pi(a) p(a) / Z` with a uniform prior over atoms.
fn toy_law(hit: &[f64]) -> Vec<f64> {
    let z: f64 = hit.iter().sum();
    hit.iter().map(|p| p / z).collect()
}

// ---------------------------------------------------------------- 1

/// Feeds a fixed prefix of uniforms; any draw past the prefix is flagged.
struct ScriptRng {
    prefix: Vec<f64>,
    pos: usize,
    overran: bool,
}

impl RngCore for ScriptRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let u = match self.prefix.get(self.pos) {
            Some(u) => *u,
            None => {
                self.overran = true;
                0.0
            }
        };
        self.pos += 1;
        // `random::<f64>()` keeps the top 53 bits
        ((u * (1u64 << 53) as f64) as u64) << 11
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for b in dst {
            *b = self.next_u64() as u8;
        }
    }
}

/// Enumerates every branch of a step whose draws are all threshold
/// comparisons against values in `cuts`. Returns (probability, result) leaves.
fn enumerate<F>(cuts: &[f64], step: &F) -> Vec<(f64, Result<StepOutcome, KernelError>)>
where
    F: Fn(&mut dyn RngCore) -> Result<StepOutcome, KernelError>,
{
    let mut edges: Vec<f64> = cuts.iter().copied().filter(|c| *c > 0.0 && *c < 1.0).collect();
    edges.push(0.0);
    edges.push(1.0);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut leaves = Vec::new();
    let mut stack = vec![(Vec::<f64>::new(), 1.0)];
    while let Some((prefix, mass)) = stack.pop() {
        let mut rng = ScriptRng { prefix: prefix.clone(), pos: 0, overran: false };
        let out = step(&mut rng);
        if !rng.overran {
            leaves.push((mass, out));
            continue;
        }
        for w in edges.windows(2) {
            let mut next = prefix.clone();
            next.push(0.5 * (w[0] + w[1]));
            stack.push((next, mass * (w[1] - w[0])));
        }
    }
    leaves
}

fn c1_exact_stationarity() -> Outcome {
    let target = toy_target(&HIT);
    let q = AtomProposal { pmf: PMF.to_vec() };
    let pi = toy_law(&HIT);
    let mut cuts: Vec<f64> = HIT.to_vec();
    let mut acc = 0.0;
    for p in PMF {
        acc += p;
        cuts.push(acc);
    }
    for a in PMF {
        for b in PMF {
            cuts.push((a / b).min(1.0));
        }
    }
    let n = HIT.len();
    let mut report = Vec::new();
    let mut ok = true;
    for (name, capped) in [("abc_mh", false), ("ind_one_hit", true)] {
        let budget = if capped { Budget::unlimited().with_max_sims(1) } else { Budget::unlimited() };
        let ctx = StepContext { target: &target, proposal: &q, epsilon: 0.5, budget: &budget };
        let mut p = vec![vec![0.0; n]; n];
        for a in 0..n {
            let leaves = enumerate(&cuts, &|rng: &mut dyn RngCore| {
                if capped {
                    ind_one_hit_step(ctx, &atom(a), rng)
                } else {
                    abc_mh_step(ctx, &atom(a), rng)
                }
            });
            // With one simulation allowed, a miss ends the enumeration; the
            // independence loop restarts afresh after a miss, so the row is
            // the hit branches renormalised by the hit mass.
            let mut miss = 0.0;
            for (m, out) in leaves {
                match out {
                    Ok(o) => p[a][o.particle.theta[0] as usize] += m,
                    Err(KernelError::SimulationCap { .. }) => miss += m,
                    Err(e) => return Err(format!("{name}: unexpected error {e}")),
                }
            }
            p[a].iter_mut().for_each(|v| *v /= 1.0 - miss);
            let row: f64 = p[a].iter().sum();
            if (row - 1.0).abs() > 1e-13 {
                return Err(format!("{name}: row {a} sums to {row}"));
            }
        }
        // closed forms for the same chains
        let hit_mass: f64 = (0..n).map(|b| PMF[b] * HIT[b]).sum();
        let mut closed = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                closed[a][b] = match name {
                    "abc_mh" => PMF[b] * (PMF[a] / PMF[b]).min(1.0) * HIT[b],
                    _ => PMF[b] * HIT[b] / hit_mass * (PMF[a] / PMF[b]).min(1.0),
                };
            }
            closed[a][a] = 1.0 - closed[a].iter().sum::<f64>();
        }
        let closed_gap = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| (p[a][b] - closed[a][b]).abs());
        let closed_gap = closed_gap.fold(0.0, f64::max);
        let resid = (0..n)
            .map(|b| ((0..n).map(|a| pi[a] * p[a][b]).sum::<f64>() - pi[b]).abs())
            .fold(0.0, f64::max);
        ok &= resid < 1e-12 && closed_gap < 1e-12;
        report.push(format!("{name} |piP-pi|={resid:.1e} |P-closed|={closed_gap:.1e}"));
    }
    check(ok, report.join("; "))
}

// ---------------------------------------------------------------- 2

fn c2_statistical_stationarity() -> Outcome {
    const STEPS: usize = 1_000_000;
    let target = toy_target(&HIT);
    let q = AtomProposal { pmf: PMF.to_vec() };
    let pi = toy_law(&HIT);
    let budget = Budget::unlimited();
    let ctx = StepContext { target: &target, proposal: &q, epsilon: 0.5, budget: &budget };
    let chi2 = ChiSquared::new((HIT.len() - 1) as f64).unwrap();
    let mut ok = true;
    let mut report = Vec::new();
    for (k, family) in [KernelFamily::OneHit, KernelFamily::RHitSingle, KernelFamily::RHitMulti].into_iter().enumerate() {
        let start = Instant::now();
        let cfg = KernelConfig { family, r: 2 };
        let mut rng = substream(0xC2, &[k as u64]);
        let mut counts = vec![0u64; HIT.len()];
        // one step from an exact draw of the target: the result is a draw
        // from pi P, independent across steps
        for _ in 0..STEPS {
            let u: f64 = rng.random();
            let mut a = 0;
            let mut c = pi[0];
            while u >= c && a + 1 < pi.len() {
                a += 1;
                c += pi[a];
            }
            let out = kernel_step(&cfg, ctx, &atom(a), &mut rng).map_err(|e| e.to_string())?;
            counts[out.particle.theta[0] as usize] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&pi)
            .map(|(&o, &p)| {
                let e = p * STEPS as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let pval = chi2.sf(stat);
        let secs = start.elapsed().as_secs_f64();
        ok &= pval > 0.01 && secs < 120.0;
        report.push(format!("{} p={pval:.3} ({secs:.1} s)", family.label()));
    }
    check(ok, report.join(", "))
}

// ---------------------------------------------------------------- 3

fn c3_one_hit_law() -> Outcome {
    const TRIALS: usize = 100_000;
    // symmetric proposal and uniform prior: the gate always opens
    let target = toy_target(&[0.5, 0.5]);
    let q = RingWalk { atoms: 2 };
    let budget = Budget::unlimited();
    let ctx = StepContext { target: &target, proposal: &q, epsilon: 0.5, budget: &budget };
    let mut rng = substream(0xC3, &[]);
    let mut accepted = 0usize;
    for _ in 0..TRIALS {
        if one_hit_step(ctx, &atom(0), &mut rng).map_err(|e| e.to_string())?.accepted {
            accepted += 1;
        }
    }
    // p / (p + p' - p p') with p = p' = 1/2
    let expect = 0.5 / (0.5 + 0.5 - 0.25);
    let rate = accepted as f64 / TRIALS as f64;
    let se = (expect * (1.0 - expect) / TRIALS as f64).sqrt();
    let z = (rate - expect) / se;
    check(z.abs() <= 3.0, format!("rate={rate:.5} expected={expect:.5} z={z:.2}"))
}

// ---------------------------------------------------------------- 4

fn c4_resampling_and_epsilon() -> Outcome {
    let mut rng = substream(0xC4, &[]);
    for case in 0..1000 {
        let m = rng.random_range(1..60);
        let n = rng.random_range(1..300);
        let w: Vec<f64> = (0..m)
            .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() * 10.0 })
            .collect();
        if w.iter().all(|v| *v == 0.0) {
            continue;
        }
        let u: f64 = rng.random();
        let idx = systematic_resample(&w, n, u).map_err(|e| format!("case {case}: {e}"))?;
        if idx.len() != n {
            return Err(format!("case {case}: {} indices for n={n}", idx.len()));
        }
        let total: f64 = w.iter().sum();
        for (j, wj) in w.iter().enumerate() {
            let mult = idx.iter().filter(|&&i| i == j).count() as f64;
            let target = n as f64 * wj / total;
            if mult != target.floor() && mult != target.ceil() {
                return Err(format!("case {case}: index {j} taken {mult} times, n*w={target}"));
            }
        }
    }
    let mut feasible = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..400);
        let omega = rng.random_range(0.05..1.0);
        let u: f64 = rng.random();
        let levels = rng.random_range(1..=n);
        let ps: Vec<Particle> = (0..n)
            .map(|i| {
                // repeated distances and some exact duplicate particles
                let d = rng.random_range(0..levels) as f64 * 0.37;
                let id = if rng.random::<f64>() < 0.1 { 0.0 } else { i as f64 };
                Particle { theta: vec![id], summary: vec![d], dist: d }
            })
            .collect();
        let previous = if rng.random::<bool>() { f64::INFINITY } else { levels as f64 * 0.2 };
        let need = (omega * n as f64).ceil() as usize;
        let unique_at = |eps: f64| -> usize {
            let w: Vec<f64> = ps.iter().map(|p| if p.dist <= eps { 1.0 } else { 0.0 }).collect();
            match systematic_resample(&w, n, u) {
                Ok(idx) => idx
                    .iter()
                    .map(|&i| (ps[i].theta[0].to_bits(), ps[i].summary[0].to_bits()))
                    .collect::<HashSet<_>>()
                    .len(),
                Err(_) => 0,
            }
        };
        match choose_epsilon(&ps, previous, omega, u) {
            Ok(c) => {
                let got = unique_at(c.epsilon);
                if c.epsilon >= previous || got < need || got != c.unique {
                    return Err(format!("case {case}: eps={} unique={got} need={need}", c.epsilon));
                }
                feasible += 1;
            }
            Err(SmcError::NoFeasibleEpsilon { .. }) => {
                let best = ps.iter().map(|p| p.dist).filter(|d| *d < previous).fold(f64::NEG_INFINITY, f64::max);
                if best.is_finite() && unique_at(best) >= need {
                    return Err(format!("case {case}: reported infeasible but {best} works"));
                }
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    Ok(format!("1000 resampling cases, 1000 threshold cases ({feasible} feasible)"))
}

// ---------------------------------------------------------------- 5, 6

fn spec(text: &str) -> RunSpec {
    parse_experiment(text).expect("valid config").runs.remove(0)
}

fn c5_gm_end_to_end() -> Outcome {
    let target = builtin_target("gm").map_err(|e| e.to_string())?;
    let post = GmExactPosterior::new(target.y0_raw[0], GM_GRID_POINTS);
    let reference: Vec<Vec<f64>> =
        post.sample(20_000, &mut substream(0xC5, &[])).into_iter().map(|v| vec![v]).collect();
    let mut ok = true;
    let mut report = Vec::new();
    for rep in 0..3 {
        let s = spec(&format!(
            "[run]\nmodel = \"gm\"\nkernel = \"one_hit\"\nproposal = \"mixture\"\ncomponents = 3\n\
             n_particles = 1000\nomega = 0.5\ntime_budget_s = 600\ntarget_epsilon = 1e-3\n\
             seed = 505\nreplication = {rep}\n"
        ));
        let r = execute(&s, 0).map_err(|e| e.to_string())?;
        let eps = r.final_epsilon().unwrap_or(f64::INFINITY);
        let w = wasserstein(&r.output, &reference, WassersteinOrder::One).map_err(|e| e.to_string())?;
        ok &= r.status == RunStatus::Completed && eps <= 1e-2 && w <= 0.5;
        report.push(format!("seed{rep}: eps={eps:.2e} W={w:.3} it={}", r.completed_iterations));
    }
    check(ok, report.join(", "))
}

fn c6_quadratic_end_to_end() -> Outcome {
    let mut ok = true;
    let mut report = Vec::new();
    for rep in 0..3 {
        let s = spec(&format!(
            "[run]\nmodel = \"quadratic\"\nkernel = \"one_hit\"\nproposal = \"mixture\"\ncomponents = 5\n\
             n_particles = 1000\nomega = 0.5\ntime_budget_s = 900\ntarget_epsilon = 1e-4\n\
             seed = 606\nreplication = {rep}\n"
        ));
        let r = execute(&s, 0).map_err(|e| e.to_string())?;
        let eps = r.final_epsilon().unwrap_or(f64::INFINITY);
        let decreasing = r.traces.windows(2).all(|w| w[1].epsilon < w[0].epsilon);
        ok &= r.status == RunStatus::Completed && eps <= 1e-3 && decreasing;
        report.push(format!(
            "seed{rep}: eps={eps:.2e} it={} strictly decreasing={decreasing}",
            r.completed_iterations
        ));
    }
    check(ok, report.join(", "))
}

// ---------------------------------------------------------------- 7

fn median(mut v: Vec<u64>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

fn c7_r_hit_single_inefficiency() -> Outcome {
    const STEPS: usize = 200;
    const CAP: u64 = 2_000_000;
    let target = builtin_target("quadratic").map_err(|e| e.to_string())?;
    let mut cfg = SmcConfig::new(
        KernelConfig::new(KernelFamily::OneHit),
        ProposalSpec::new(ProposalKind::ClassicIndependence),
    );
    cfg.max_iterations = Some(3);
    let out = run_abc_smc(&target, &cfg, 707).map_err(|e| e.to_string())?;
    let eps = out.final_epsilon;
    let train = TrainingSet::new(out.thetas(), TrainingMode::WithinEpsilon);
    let q = fit_classic_independence(&train).map_err(|e| e.to_string())?;
    let budget = Budget::unlimited().with_max_sims(CAP);
    let ctx = StepContext { target: &target, proposal: &q, epsilon: eps, budget: &budget };
    let sims = |family: KernelFamily| -> Result<(Vec<u64>, usize), String> {
        let cfg = KernelConfig { family, r: 2 };
        let mut counts = Vec::with_capacity(STEPS);
        let mut censored = 0;
        for i in 0..STEPS {
            let p = &out.population[i % out.population.len()];
            let mut rng = substream(0xC7, &[family as u64, i as u64]);
            match kernel_step(&cfg, ctx, p, &mut rng) {
                Ok(o) => counts.push(o.n_sims),
                // censored at the cap: a lower bound on the true count
                Err(KernelError::SimulationCap { n_sims }) => {
                    counts.push(n_sims);
                    censored += 1;
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        Ok((counts, censored))
    };
    let (one, _) = sims(KernelFamily::OneHit)?;
    let (single, censored) = sims(KernelFamily::RHitSingle)?;
    let (m1, ms) = (median(one), median(single));
    check(
        ms >= 10.0 * m1,
        format!("eps={eps:.3e} median sims one_hit={m1} r_hit_single={ms} ({censored} censored at {CAP})"),
    )
}

// ---------------------------------------------------------------- 8

fn randomised_flow(dim: usize, cfg: &FlowConfig, rng: &mut dyn RngCore, spread: f64) -> SplineFlow {
    let mut f = SplineFlow::new(dim, cfg, rng);
    let phi: Vec<f64> = f.phi().iter().map(|p| p + spread * rng.sample::<f64, _>(StandardNormal)).collect();
    f.set_phi(phi);
    f
}

fn small_flow_config() -> FlowConfig {
    FlowConfig { bins: 8, hidden: 8, tail_bound: 5.0, ..FlowConfig::default() }
}

fn c8_flow_engine() -> Outcome {
    let mut rng = substream(0xC8, &[]);
    let mut report = Vec::new();

    // (a) round trip
    let cfg = small_flow_config();
    let mut worst_rt: f64 = 0.0;
    let mut worst_ld: f64 = 0.0;
    for i in 0..1000 {
        let dim = 1 + i % 3;
        let mut f = randomised_flow(dim, &cfg, &mut rng, 0.5);
        f.set_standardiser((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), vec![1.7; dim]);
        let z: Vec<f64> = (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (theta, ld) = f.forward(&z);
        let (back, ldi) = f.inverse(&theta);
        worst_rt = z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(worst_rt, f64::max);
        worst_ld = worst_ld.max((ld + ldi).abs());
    }
    let ok_a = worst_rt < 1e-8 && worst_ld < 1e-8;
    report.push(format!("(a) round trip {worst_rt:.1e}, log-det {worst_ld:.1e}"));

    // (b) gradients
    let mut worst_g: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(1..=3);
        let cfg = FlowConfig { bins: 6, hidden: 6, tail_bound: 4.0, ..FlowConfig::default() };
        let mut f = randomised_flow(dim, &cfg, &mut rng, 0.4);
        f.set_standardiser(vec![0.2; dim], vec![1.3; dim]);
        let batch: Vec<Vec<f64>> =
            (0..10).map(|_| (0..dim).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let (_, g) = f.objective_and_gradient(&batch);
        let phi = f.phi().to_vec();
        let h = 1e-5;
        for k in 0..phi.len() {
            let mut p = phi.clone();
            p[k] += h;
            f.set_phi(p.clone());
            let up = f.objective_and_gradient(&batch).0;
            p[k] -= 2.0 * h;
            f.set_phi(p);
            let down = f.objective_and_gradient(&batch).0;
            let fd = (up - down) / (2.0 * h);
            // coordinates that are zero up to finite-difference noise carry no
            // relative information
            let scale = fd.abs().max(g[k].abs());
            if scale > 1e-5 {
                worst_g = worst_g.max((g[k] - fd).abs() / scale);
            }
        }
        f.set_phi(phi);
    }
    let ok_b = worst_g < 1e-4;
    report.push(format!("(b) gradient rel err {worst_g:.1e}"));

    // (c) 1-D normalisation
    let mut worst_norm: f64 = 0.0;
    for _ in 0..5 {
        let mut f = randomised_flow(1, &FlowConfig::default(), &mut rng, 0.5);
        f.set_standardiser(vec![rng.random_range(-1.0..1.0)], vec![rng.random_range(0.5..1.5)]);
        let (lo, hi, n) = (-30.0, 30.0, 600_000);
        let hstep = (hi - lo) / n as f64;
        // composite Simpson
        let mut s = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * hstep;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * f.logpdf(&[x]).exp();
        }
        worst_norm = worst_norm.max((s * hstep / 3.0 - 1.0).abs());
    }
    let ok_c = worst_norm < 1e-3;
    report.push(format!("(c) |integral - 1| {worst_norm:.1e}"));

    // (d) banana vs Gaussian
    let banana = |n: usize, rng: &mut dyn RngCore| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let t2: f64 = 0.8 * rng.sample::<f64, _>(StandardNormal);
                let t1 = t2 * t2 + 0.05 * rng.sample::<f64, _>(StandardNormal);
                vec![t1, t2]
            })
            .collect()
    };
    let train = banana(2000, &mut rng);
    let test = banana(300, &mut rng);
    let held = banana(5000, &mut rng);
    let fcfg = FlowConfig { max_epochs: 150, ..FlowConfig::default() };
    let init = SplineFlow::new(2, &fcfg, &mut rng);
    let (flow, _) = train_flow(&init, &train, &test, &fcfg, &mut rng).map_err(|e| e.to_string())?;
    let flow_ll = held.iter().map(|x| flow.logpdf(x)).sum::<f64>() / held.len() as f64;
    let gauss_ll = gaussian_mle_heldout(&train, &held);
    let ok_d = flow_ll > gauss_ll;
    report.push(format!("(d) held-out flow {flow_ll:.3} vs gaussian {gauss_ll:.3}"));

    check(ok_a && ok_b && ok_c && ok_d, report.join("; "))
}

/// Mean held-out log-density of the bivariate Gaussian MLE.
fn gaussian_mle_heldout(train: &[Vec<f64>], held: &[Vec<f64>]) -> f64 {
    let n = train.len() as f64;
    let mx = train.iter().map(|x| x[0]).sum::<f64>() / n;
    let my = train.iter().map(|x| x[1]).sum::<f64>() / n;
    let sxx = train.iter().map(|x| (x[0] - mx).powi(2)).sum::<f64>() / n;
    let syy = train.iter().map(|x| (x[1] - my).powi(2)).sum::<f64>() / n;
    let sxy = train.iter().map(|x| (x[0] - mx) * (x[1] - my)).sum::<f64>() / n;
    let det = sxx * syy - sxy * sxy;
    held.iter()
        .map(|x| {
            let (a, b) = (x[0] - mx, x[1] - my);
            let q = (syy * a * a - 2.0 * sxy * a * b + sxx * b * b) / det;
            -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
        })
        .sum::<f64>()
        / held.len() as f64
}

// ---------------------------------------------------------------- 9

fn c9_mixture_engine() -> Outcome {
    let mut rng = substream(0xC9, &[]);
    let mut report = Vec::new();
    let mut worst_drop: f64 = 0.0;
    for _ in 0..50 {
        let dim = rng.random_range(1..=3);
        let true_k = rng.random_range(1..=4);
        let centres: Vec<Vec<f64>> =
            (0..true_k).map(|_| (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect()).collect();
        let m = rng.random_range(150..400);
        let pts: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let c = &centres[rng.random_range(0..true_k)];
                let s = rng.random_range(0.3..2.0);
                c.iter().map(|v| v + s * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let k = rng.random_range(1..=4);
        let structure = CovarianceStructure::ALL[rng.random_range(0..CovarianceStructure::ALL.len())];
        let fit = fit_gaussian_mixture_with(
            &TrainingSet::new(pts, TrainingMode::All),
            k,
            structure,
            &EmOptions::default(),
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        for w in fit.objective_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let ok_mono = worst_drop <= 1e-9;
    report.push(format!("largest objective drop {worst_drop:.1e}"));

    // k = 1 against the closed-form MLE
    let pts: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            vec![1.0 + 2.0 * a, -3.0 + 0.5 * a + 0.7 * b]
        })
        .collect();
    let n = pts.len() as f64;
    let mean: Vec<f64> = (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let cov = |i: usize, j: usize| pts.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n;
    let fit = fit_gaussian_mixture_with(
        &TrainingSet::new(pts.clone(), TrainingMode::All),
        1,
        CovarianceStructure::Full,
        &EmOptions::default(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let mix = &fit.mixture;
    let mut err: f64 = 0.0;
    for i in 0..2 {
        err = err.max((mix.means[0][i] - mean[i]).abs());
        for j in 0..2 {
            err = err.max((mix.covariances[0][(i, j)] - cov(i, j)).abs());
        }
    }
    let ok_k1 = err < 1e-8;
    report.push(format!("k=1 MLE error {err:.1e}"));

    // two separated clusters
    let mut ok_two = true;
    for half in [5.0, 10.0] {
        let pts: Vec<Vec<f64>> = (0..1000)
            .map(|i| {
                let c = if i < 500 { -half } else { half };
                vec![c + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let fit = fit_gaussian_mixture_with(
            &TrainingSet::new(pts, TrainingMode::All),
            2,
            CovarianceStructure::Full,
            &EmOptions::default(),
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        let mix = &fit.mixture;
        let mut order: Vec<usize> = vec![0, 1];
        order.sort_by(|&a, &b| mix.means[a][0].total_cmp(&mix.means[b][0]));
        let mean_err = order
            .iter()
            .zip([-half, half])
            .map(|(&j, c)| ((mix.means[j][0] - c).powi(2) + mix.means[j][1].powi(2)).sqrt())
            .fold(0.0, f64::max);
        let weight_err = mix.weights.iter().map(|w| (w - 0.5).abs()).fold(0.0, f64::max);
        ok_two &= mean_err < 0.2 && weight_err < 0.05;
        report.push(format!("clusters at +-{half}: mean err {mean_err:.3}, weight err {weight_err:.3}"));
    }
    check(ok_mono && ok_k1 && ok_two, report.join("; "))
}

// ---------------------------------------------------------------- 10

fn c10_defensive_bound() -> Outcome {
    const ETA: f64 = 0.1;
    let mut rng = substream(0xCA, &[]);
    let mut worst: f64 = 0.0;
    let mut report = Vec::new();

    // gm: narrow mixture far from the prior's centre
    let gm: Arc<dyn Model> = Arc::new(GaussianMixtureModel);
    let pts: Vec<Vec<f64>> = (0..400).map(|_| vec![3.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)]).collect();
    let train = TrainingSet::new(pts, TrainingMode::All);
    let inner: Vec<Arc<dyn ProposalKernel>> = vec![
        Arc::new(
            fit_gaussian_mixture_with(&train, 2, CovarianceStructure::Full, &EmOptions::default(), &mut rng)
                .map_err(|e| e.to_string())?
                .mixture,
        ),
        Arc::new(fit_classic_independence(&train).map_err(|e| e.to_string())?),
    ];
    for q_star in &inner {
        let q = defensive_wrap(q_star.clone(), gm.clone(), ETA).map_err(|e| e.to_string())?;
        for i in 0..=200_000 {
            let x = [-12.0 + 24.0 * i as f64 / 200_000.0];
            worst = worst.max((gm.prior_logpdf(&x) - q.logpdf(&x, &x)).exp());
        }
    }
    report.push(format!("gm sup {worst:.12}"));

    // quadratic: banana-shaped mixture
    let quad: Arc<dyn Model> = Arc::new(Quadratic);
    let pts: Vec<Vec<f64>> = (0..600)
        .map(|_| {
            let t2: f64 = 0.7 * rng.sample::<f64, _>(StandardNormal);
            vec![t2 * t2 + 0.01 * rng.sample::<f64, _>(StandardNormal), t2]
        })
        .collect();
    let train = TrainingSet::new(pts, TrainingMode::All);
    let q_star: Arc<dyn ProposalKernel> = Arc::new(
        fit_gaussian_mixture_with(&train, 5, CovarianceStructure::Full, &EmOptions::default(), &mut rng)
            .map_err(|e| e.to_string())?
            .mixture,
    );
    let q = defensive_wrap(q_star, quad.clone(), ETA).map_err(|e| e.to_string())?;
    let mut worst_q: f64 = 0.0;
    for i in 0..=500 {
        for j in 0..=500 {
            let x = [-8.0 + 16.0 * i as f64 / 500.0, -8.0 + 16.0 * j as f64 / 500.0];
            worst_q = worst_q.max((quad.prior_logpdf(&x) - q.logpdf(&x, &x)).exp());
        }
    }
    report.push(format!("quadratic sup {worst_q:.12}"));
    let bound = 1.0 / ETA + 1e-9;
    check(worst <= bound && worst_q <= bound, format!("{} (bound 1/eta = {})", report.join(", "), 1.0 / ETA))
}

// ---------------------------------------------------------------- 11

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>], order: WassersteinOrder) -> f64 {
    let pw = match order {
        WassersteinOrder::One => 1,
        WassersteinOrder::Two => 2,
    };
    let best = permutations(a.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    let d: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    d.powi(pw)
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64;
    best.powf(1.0 / pw as f64)
}

fn cloud(n: usize, d: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn c11_wasserstein() -> Outcome {
    let mut rng = substream(0xCB, &[]);
    let orders = [WassersteinOrder::One, WassersteinOrder::Two];
    let mut worst_bf: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(1..=6);
        let (a, b) = (cloud(n, 2, &mut rng), cloud(n, 2, &mut rng));
        let order = orders[i % 2];
        let w = wasserstein(&a, &b, order).map_err(|e| e.to_string())?;
        worst_bf = worst_bf.max((w - brute_force(&a, &b, order)).abs());
    }
    let mut worst_1d: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(1..=40);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let order = orders[i % 2];
        let p = if order == WassersteinOrder::One { 1 } else { 2 };
        let fast = wasserstein_1d(&x, &y, order);
        let col = |v: &[f64]| v.iter().map(|s| vec![*s]).collect::<Vec<_>>();
        let lp = wasserstein_simplex(&col(&x), &col(&y), order).map_err(|e| e.to_string())?;
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        let sorted = (x.iter().zip(&y).map(|(a, b)| (a - b).abs().powi(p)).sum::<f64>() / n as f64).powf(1.0 / p as f64);
        worst_1d = worst_1d.max((fast - sorted).abs()).max((lp - sorted).abs());
    }
    let mut axioms = true;
    for i in 0..100 {
        let order = orders[i % 2];
        let n = rng.random_range(1..=7);
        let (a, b, c) = (cloud(n, 2, &mut rng), cloud(rng.random_range(1..=7), 2, &mut rng), cloud(n, 2, &mut rng));
        let w = |x: &[Vec<f64>], y: &[Vec<f64>]| wasserstein(x, y, order).unwrap();
        axioms &= w(&a, &a).abs() < 1e-12;
        axioms &= (w(&a, &b) - w(&b, &a)).abs() < 1e-9;
        axioms &= w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9;
        axioms &= w(&a, &b) > 0.0;
    }
    check(
        worst_bf < 1e-9 && worst_1d < 1e-9 && axioms,
        format!("brute force {worst_bf:.1e}, sorted 1-D {worst_1d:.1e}, axioms hold: {axioms}"),
    )
}

// ---------------------------------------------------------------- 12

fn c12_seir() -> Outcome {
    const SIMS: usize = 100_000;
    let seir = Seir::new(60);
    let mut rng = substream(0xCC, &[]);
    let alpha = (-0.5f64).exp();
    let theta = [alpha.ln(), -1.0, -3.0];
    let ys: Vec<f64> = (0..SIMS).map(|_| seir.simulate_trajectory(&theta, &mut rng).reported[1]).collect();
    let mean = ys.iter().sum::<f64>() / SIMS as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (SIMS - 1) as f64;
    let se = (var / SIMS as f64).sqrt();
    let expect = 0.1 + 5.0 * (1.0 - (-alpha).exp());
    let ok_mean = (mean - expect).abs() <= 3.0 * se;
    let mut ok_sum = true;
    for _ in 0..1000 {
        let th = seir.prior_sample(&mut rng);
        let tr = seir.simulate_trajectory(&th, &mut rng);
        for t in 0..tr.s.len() {
            ok_sum &= tr.s[t] + tr.e[t] + tr.i[t] + tr.r[t] == SEIR_POPULATION;
        }
    }
    check(
        ok_mean && ok_sum,
        format!("mean Y1={mean:.4} expected={expect:.4} se={se:.4}; compartment sums constant: {ok_sum}"),
    )
}

// ---------------------------------------------------------------- 13

fn c13_determinism() -> Outcome {
    let configs = [
        "[run]\nmodel = \"gm\"\nkernel = \"one_hit\"\nproposal = \"mixture\"\ncomponents = 3\n\
         n_particles = 400\ntime_budget_s = 3\nseed = 1301\n",
        "[run]\nmodel = \"quadratic\"\nkernel = \"r_hit_multi\"\nproposal = \"classic_rw\"\n\
         n_particles = 300\ntime_budget_s = 3\nseed = 1302\n",
        "[run]\nmodel = \"gm\"\nkernel = \"ind_one_hit\"\nproposal = \"flow\"\nn_particles = 200\n\
         n_train = 180\nn_test = 20\ntime_budget_s = 6\nseed = 1303\n\n[run.flow]\nmax_epochs = 20\n",
    ];
    let mut report = Vec::new();
    let mut ok = true;
    for text in configs {
        let s = spec(text);
        for original in [1usize, 4] {
            let rec = execute(&s, original).map_err(|e| e.to_string())?;
            if rec.status != RunStatus::Completed {
                return Err(format!("{}: {:?}", s.label(), rec.status));
            }
            let echoed = RunRecord::from_json(&rec.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for workers in [1usize, 4] {
                let again = execute(&echoed.replay_spec(), workers).map_err(|e| e.to_string())?;
                let same_eps = again.final_epsilon().map(f64::to_bits) == rec.final_epsilon().map(f64::to_bits);
                let same_out = again.output == rec.output;
                ok &= same_eps && same_out;
                if !(same_eps && same_out) {
                    report.push(format!("{} w{original}->w{workers} differs", s.label()));
                }
            }
            report.push(format!("{} w{original}: {} it", s.model, rec.completed_iterations));
        }
    }
    check(ok, report.join(", "))
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "exact stationarity", limit_s: 1.0, run: c1_exact_stationarity },
        Criterion { id: 2, name: "statistical stationarity", limit_s: 360.0, run: c2_statistical_stationarity },
        Criterion { id: 3, name: "one-hit acceptance law", limit_s: 10.0, run: c3_one_hit_law },
        Criterion { id: 4, name: "resampling and threshold choice", limit_s: 30.0, run: c4_resampling_and_epsilon },
        Criterion { id: 5, name: "gm end to end", limit_s: 1800.0, run: c5_gm_end_to_end },
        Criterion { id: 6, name: "quadratic end to end", limit_s: 2700.0, run: c6_quadratic_end_to_end },
        Criterion { id: 7, name: "r_hit_single inefficiency", limit_s: 600.0, run: c7_r_hit_single_inefficiency },
        Criterion { id: 8, name: "flow engine", limit_s: 300.0, run: c8_flow_engine },
        Criterion { id: 9, name: "mixture engine", limit_s: 120.0, run: c9_mixture_engine },
        Criterion { id: 10, name: "defensive bound", limit_s: 30.0, run: c10_defensive_bound },
        Criterion { id: 11, name: "wasserstein solver", limit_s: 60.0, run: c11_wasserstein },
        Criterion { id: 12, name: "seir moments and invariants", limit_s: 120.0, run: c12_seir },
        Criterion { id: 13, name: "determinism", limit_s: 600.0, run: c13_determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut results = BTreeMap::new();
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(d) if secs <= c.limit_s => (true, d),
            Ok(d) => (false, format!("{d}; took {secs:.1} s, limit {} s", c.limit_s)),
            Err(d) => (false, d),
        };
        println!(
            "criterion {:>2} {:<32} {} ({secs:.1} s) {detail}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" }
        );
        results.insert(c.id, pass);
    }
    let failed = results.values().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
