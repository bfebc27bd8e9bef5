//! Gaussian mixture proposals fitted by EM, with optional BIC search over
//! the number of components and the covariance structure.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{ProposalError, ProposalKernel, TrainingSet};
use crate::linalg::{jitter_for, log_sum_exp, sample_covariance, Cholesky};
use crate::rng::SimRng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceStructure {
    Full,
    Diagonal,
    Spherical,
    TiedFull,
}

impl CovarianceStructure {
    pub const ALL: [CovarianceStructure; 4] = [Self::Full, Self::Diagonal, Self::Spherical, Self::TiedFull];

    fn n_params(self, k: usize, d: usize) -> usize {
        match self {
            Self::Full => k * d * (d + 1) / 2,
            Self::Diagonal => k * d,
            Self::Spherical => k,
            Self::TiedFull => d * (d + 1) / 2,
        }
    }
}

/// Number of mixture components: fixed, or chosen by BIC over `3..=10`.
/// Serialised as an integer or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ComponentsRepr", into = "ComponentsRepr")]
pub enum MixtureComponents {
    Fixed(usize),
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ComponentsRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<ComponentsRepr> for MixtureComponents {
    type Error = String;
    fn try_from(r: ComponentsRepr) -> Result<Self, String> {
        match r {
            ComponentsRepr::Count(0) => Err("a mixture needs at least one component".into()),
            ComponentsRepr::Count(k) => Ok(Self::Fixed(k)),
            ComponentsRepr::Name(s) if s == "auto" => Ok(Self::Auto),
            ComponentsRepr::Name(s) => Err(format!("expected a component count or \"auto\", got {s:?}")),
        }
    }
}

impl From<MixtureComponents> for ComponentsRepr {
    fn from(c: MixtureComponents) -> Self {
        match c {
            MixtureComponents::Fixed(k) => ComponentsRepr::Count(k),
            MixtureComponents::Auto => ComponentsRepr::Name("auto".into()),
        }
    }
}

impl Default for MixtureComponents {
    fn default() -> Self {
        Self::Fixed(5)
    }
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Stop when the objective changes by less than `tol_per_point * M`.
    pub tol_per_point: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol_per_point: 1e-6, max_iter: 300 }
    }
}

/// Fitted Gaussian mixture. `covariances` are the maximum-likelihood
/// estimates; densities and draws use `covariance + jitter * I`.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    pub structure: CovarianceStructure,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub jitter: f64,
    chols: Vec<Cholesky>,
    log_weights: Vec<f64>,
}

/// JSON form of a mixture: weights, means and covariance rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSnapshot {
    pub structure: CovarianceStructure,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub jitter: f64,
}

impl MixtureDensity {
    fn assemble(
        structure: CovarianceStructure,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<DMatrix<f64>>,
        jitter: f64,
    ) -> Result<Self, ProposalError> {
        let chols = covariances
            .iter()
            .map(|c| Cholesky::with_jitter(c, jitter))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                ProposalError::DegenerateTrainingSet("component covariance not positive definite".into())
            })?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { structure, weights, means, covariances, jitter, chols, log_weights })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn snapshot(&self) -> MixtureSnapshot {
        MixtureSnapshot {
            structure: self.structure,
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: self
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            jitter: self.jitter,
        }
    }

    pub fn from_snapshot(s: &MixtureSnapshot) -> Result<Self, ProposalError> {
        let covs = s
            .covariances
            .iter()
            .map(|rows| {
                let d = rows.len();
                DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied())
            })
            .collect();
        Self::assemble(s.structure, s.weights.clone(), s.means.clone(), covs, s.jitter)
    }

    fn component_logpdfs<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = f64> + Clone + 'a {
        self.chols
            .iter()
            .zip(&self.means)
            .zip(&self.log_weights)
            .map(move |((c, m), lw)| lw + c.gaussian_logpdf(x, m))
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(self.component_logpdfs(x))
    }

    /// Summed log-density over a sample.
    pub fn objective(&self, xs: &[Vec<f64>]) -> f64 {
        xs.iter().map(|x| self.log_density(x)).sum()
    }
}

impl ProposalKernel for MixtureDensity {
    /// Component by inverse CDF on the weights, then a Gaussian draw.
    fn propose(&self, _current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = i;
                break;
            }
        }
        self.chols[j].sample(&self.means[j], rng)
    }

    fn logpdf(&self, proposed: &[f64], _current: &[f64]) -> f64 {
        self.log_density(proposed)
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Result of one EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: MixtureDensity,
    /// Objective after each E-step; the last entry belongs to `mixture`.
    pub objective_trace: Vec<f64>,
    pub bic: f64,
    pub reseeded: bool,
}

/// One evaluated configuration of a BIC search.
#[derive(Debug, Clone, PartialEq)]
pub struct BicCandidate {
    pub k: usize,
    pub structure: CovarianceStructure,
    /// `None` when that fit failed and was skipped.
    pub bic: Option<f64>,
}

pub fn fit_gaussian_mixture(
    d: &TrainingSet,
    components: MixtureComponents,
    rng: &mut dyn RngCore,
) -> Result<MixtureDensity, ProposalError> {
    match components {
        MixtureComponents::Fixed(k) => {
            fit_gaussian_mixture_with(d, k, CovarianceStructure::Full, &EmOptions::default(), rng)
                .map(|f| f.mixture)
        }
        MixtureComponents::Auto => bic_search(d, 3..=10, &CovarianceStructure::ALL, rng).map(|(f, _)| f.mixture),
    }
}

/// Fits every `(k, structure)` pair and keeps the lowest BIC. Failed fits
/// are recorded and skipped.
pub fn bic_search(
    d: &TrainingSet,
    ks: impl IntoIterator<Item = usize>,
    structures: &[CovarianceStructure],
    rng: &mut dyn RngCore,
) -> Result<(EmFit, Vec<BicCandidate>), ProposalError> {
    let mut best: Option<EmFit> = None;
    let mut table = Vec::new();
    let mut last_err = None;
    for k in ks {
        for &structure in structures {
            let mut sub = SimRng::seed_from_u64(rng.next_u64());
            match fit_gaussian_mixture_with(d, k, structure, &EmOptions::default(), &mut sub) {
                Ok(fit) => {
                    table.push(BicCandidate { k, structure, bic: Some(fit.bic) });
                    if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
                        best = Some(fit);
                    }
                }
                Err(e) => {
                    table.push(BicCandidate { k, structure, bic: None });
                    last_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(b) => Ok((b, table)),
        None => Err(last_err.unwrap_or(ProposalError::InsufficientData { needed: 1, got: 0 })),
    }
}

/// EM for a `k`-component mixture with the given covariance structure.
pub fn fit_gaussian_mixture_with(
    d: &TrainingSet,
    k: usize,
    structure: CovarianceStructure,
    opts: &EmOptions,
    rng: &mut dyn RngCore,
) -> Result<EmFit, ProposalError> {
    let x = &d.thetas;
    let m = x.len();
    let dim = d.dim();
    let needed = k * (dim + 1);
    if k == 0 || m < needed.max(2) {
        return Err(ProposalError::InsufficientData { needed: needed.max(2), got: m });
    }
    let global = sample_covariance(x);
    if global.trace() <= 0.0 {
        return Err(ProposalError::DegenerateTrainingSet("all training points coincide".into()));
    }
    let jitter = jitter_for(&global);

    let centers = kmeans_pp(x, k, rng);
    let mut resp = vec![0.0; m * k];
    for (i, xi) in x.iter().enumerate() {
        let j = nearest(xi, &centers);
        resp[i * k + j] = 1.0;
    }

    let mut state = EmState { reseeded: false, global, jitter, structure };
    let mut mixture = state.m_step(x, &resp, k, None)?;
    let mut trace = Vec::new();
    for iter in 0..opts.max_iter {
        let obj = e_step(x, &mixture, &mut resp);
        trace.push(obj);
        if iter > 0 {
            let prev = trace[iter - 1];
            if (obj - prev).abs() < opts.tol_per_point * m as f64 {
                break;
            }
        }
        if iter + 1 == opts.max_iter {
            break;
        }
        mixture = state.m_step(x, &resp, k, Some(&mixture))?;
    }
    let loglik = *trace.last().expect("at least one E-step");
    let n_params = (k - 1) + k * dim + structure.n_params(k, dim);
    let bic = -2.0 * loglik + n_params as f64 * (m as f64).ln();
    Ok(EmFit { mixture, objective_trace: trace, bic, reseeded: state.reseeded })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn kmeans_pp(x: &[Vec<f64>], k: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    let mut centers = vec![x[rng.random_range(0..x.len())].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = x.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..x.len())
        };
        let c = x[idx].clone();
        for (di, p) in d2.iter_mut().zip(x) {
            *di = di.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Fills responsibilities and returns the objective.
fn e_step(x: &[Vec<f64>], mix: &MixtureDensity, resp: &mut [f64]) -> f64 {
    let k = mix.k();
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for (i, xi) in x.iter().enumerate() {
        for (b, l) in buf.iter_mut().zip(mix.component_logpdfs(xi)) {
            *b = l;
        }
        let lse = log_sum_exp(buf.iter().copied());
        total += lse;
        for j in 0..k {
            resp[i * k + j] = (buf[j] - lse).exp();
        }
    }
    total
}

struct EmState {
    reseeded: bool,
    global: DMatrix<f64>,
    jitter: f64,
    structure: CovarianceStructure,
}

impl EmState {
    fn m_step(
        &mut self,
        x: &[Vec<f64>],
        resp: &[f64],
        k: usize,
        current: Option<&MixtureDensity>,
    ) -> Result<MixtureDensity, ProposalError> {
        let m = x.len();
        let dim = x[0].len();
        let mut mass = vec![0.0; k];
        let mut means = vec![vec![0.0; dim]; k];
        for (i, xi) in x.iter().enumerate() {
            for j in 0..k {
                let r = resp[i * k + j];
                mass[j] += r;
                for (mu, v) in means[j].iter_mut().zip(xi) {
                    *mu += r * v;
                }
            }
        }
        let floor = 1e-8 * m as f64;
        let mut collapsed = Vec::new();
        for j in 0..k {
            if mass[j] < floor {
                collapsed.push(j);
            } else {
                means[j].iter_mut().for_each(|v| *v /= mass[j]);
            }
        }

        let mut scatter = vec![DMatrix::<f64>::zeros(dim, dim); k];
        for (i, xi) in x.iter().enumerate() {
            for j in 0..k {
                let r = resp[i * k + j];
                if r == 0.0 || mass[j] < floor {
                    continue;
                }
                let s = &mut scatter[j];
                for a in 0..dim {
                    let da = xi[a] - means[j][a];
                    for b in 0..=a {
                        s[(a, b)] += r * da * (xi[b] - means[j][b]);
                    }
                }
            }
        }
        for s in scatter.iter_mut() {
            for a in 0..dim {
                for b in 0..a {
                    s[(b, a)] = s[(a, b)];
                }
            }
        }

        let mut weights: Vec<f64> = mass.iter().map(|w| w / m as f64).collect();
        let mut covs: Vec<DMatrix<f64>> = match self.structure {
            CovarianceStructure::Full => {
                (0..k).map(|j| &scatter[j] / mass[j].max(floor)).collect()
            }
            CovarianceStructure::Diagonal => (0..k)
                .map(|j| DMatrix::from_diagonal(&(scatter[j].diagonal() / mass[j].max(floor))))
                .collect(),
            CovarianceStructure::Spherical => (0..k)
                .map(|j| {
                    let v = scatter[j].trace() / (dim as f64 * mass[j].max(floor));
                    DMatrix::identity(dim, dim) * v
                })
                .collect(),
            CovarianceStructure::TiedFull => {
                let mut t = DMatrix::zeros(dim, dim);
                for s in &scatter {
                    t += s;
                }
                t /= m as f64;
                vec![t; k]
            }
        };

        if !collapsed.is_empty() {
            if self.reseeded {
                return Err(ProposalError::EmDegenerate(collapsed[0]));
            }
            self.reseeded = true;
            // Reseed at the points worst explained by the current fit.
            let mut scores: Vec<(f64, usize)> = x
                .iter()
                .enumerate()
                .map(|(i, xi)| (current.map_or(0.0, |c| c.log_density(xi)), i))
                .collect();
            scores.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (n, &j) in collapsed.iter().enumerate() {
                means[j] = x[scores[n % scores.len()].1].clone();
                covs[j] = self.global.clone();
                weights[j] = 1.0 / k as f64;
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }

        MixtureDensity::assemble(self.structure, weights, means, covs, self.jitter)
    }
}
