use std::collections::HashMap;

use super::{Particle, SmcError};

/// Systematic resampling: index `j` is taken once for every `k` with
/// `(k + u) / n` in `[W_{j-1}, W_j)`, `W` the normalised cumulative
/// weights. Output is sorted.
pub fn systematic_resample(weights: &[f64], n: usize, u: f64) -> Result<Vec<usize>, SmcError> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(SmcError::AllZeroWeights);
    }
    let last = weights.iter().rposition(|w| *w > 0.0).expect("positive weight");
    // points below n * W_j number ceil(n * W_j - u); the last edge is pinned to n
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut below = 0usize;
    for (j, w) in weights.iter().enumerate().take(last + 1) {
        cum += w;
        let edge = if j == last {
            n
        } else {
            ((n as f64 * cum / total - u).ceil().max(0.0) as usize).clamp(below, n)
        };
        out.extend(std::iter::repeat_n(j, edge - below));
        below = edge;
    }
    Ok(out)
}

/// Class labels under bitwise equality of `(theta, summary)`.
pub fn equivalence_classes(particles: &[Particle]) -> Vec<usize> {
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    particles
        .iter()
        .map(|p| {
            let key: Vec<u64> = p.theta.iter().chain(&p.summary).map(|v| v.to_bits()).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

/// Distinct classes among resampled indices.
pub fn unique_count(indices: &[usize], classes: &[usize]) -> usize {
    let mut seen: Vec<usize> = indices.iter().map(|&i| classes[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Weights `1[dist <= eps]`.
pub fn indicator_weights(particles: &[Particle], eps: f64) -> Vec<f64> {
    particles.iter().map(|p| if p.dist <= eps { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    pub unique: usize,
}

/// Smallest observed distance below `previous` whose thresholded,
/// systematically resampled population keeps at least `ceil(omega * N)`
/// distinct particles, found by bisection over the sorted candidates with
/// the resampling draw `u` held fixed.
pub fn choose_epsilon(
    particles: &[Particle],
    previous: f64,
    omega: f64,
    u: f64,
) -> Result<EpsilonChoice, SmcError> {
    let n = particles.len();
    let need = (omega * n as f64).ceil() as usize;
    let classes = equivalence_classes(particles);
    let mut cands: Vec<f64> = particles.iter().map(|p| p.dist).filter(|d| *d < previous).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let unique_at = |eps: f64| -> usize {
        let w = indicator_weights(particles, eps);
        match systematic_resample(&w, n, u) {
            Ok(idx) => unique_count(&idx, &classes),
            Err(_) => 0,
        }
    };
    let Some(&top) = cands.last() else {
        return Err(SmcError::NoFeasibleEpsilon { needed: need, best: 0 });
    };
    let top_unique = unique_at(top);
    if top_unique < need {
        return Err(SmcError::NoFeasibleEpsilon { needed: need, best: top_unique });
    }
    // invariant: cands[hi] feasible; everything below lo is infeasible
    let (mut lo, mut hi) = (0usize, cands.len() - 1);
    let mut hi_unique = top_unique;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let m = unique_at(cands[mid]);
        if m >= need {
            hi = mid;
            hi_unique = m;
        } else {
            lo = mid + 1;
        }
    }
    Ok(EpsilonChoice { epsilon: cands[hi], unique: hi_unique })
}
