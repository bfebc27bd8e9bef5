//! Experiment configuration: one `[run]` table of settings and an optional
//! `[grid]` table whose arrays expand the run into a Cartesian product.
//!
//! ```toml
//! [run]
//! model = "gm"
//! kernel = "one_hit"
//! proposal = "mixture"
//! components = 3
//! time_budget_s = 600
//! seed = 11
//! replications = 3
//!
//! [grid]
//! model = ["gm", "quadratic"]
//! proposal = ["mixture", "classic_independence"]
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diagnostics::WassersteinOrder;
use crate::flow::FlowConfig;
use crate::kernels::{KernelConfig, KernelFamily};
use crate::model::MODEL_NAMES;
use crate::proposal::{MixtureComponents, TrainingMode};
use crate::rng::replication_seed;
use crate::smc::{ProposalKind, ProposalSpec, SmcConfig};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalName {
    ClassicRw,
    ClassicIndependence,
    Mixture,
    Flow,
}

fn default_r() -> usize {
    2
}
fn default_n() -> usize {
    1000
}
fn default_train() -> usize {
    900
}
fn default_test() -> usize {
    100
}
fn default_omega() -> f64 {
    0.5
}

/// Fully resolved settings of one run; echoed verbatim into its record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: String,
    pub kernel: KernelFamily,
    #[serde(default = "default_r")]
    pub r: usize,
    pub proposal: ProposalName,
    #[serde(default)]
    pub components: MixtureComponents,
    #[serde(default)]
    pub defensive_eta: Option<f64>,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub training_set: TrainingMode,
    #[serde(default = "default_n")]
    pub n_particles: usize,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub time_budget_s: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    /// Master seed; the run seed also folds in the replication index.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replication: u64,
    /// Observed-data CSV replacing the model's shipped data.
    #[serde(default)]
    pub observed: Option<PathBuf>,
    /// Reference posterior sample CSV for the Wasserstein loss.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub wasserstein_order: WassersteinOrder,
    #[serde(default)]
    pub flow: FlowConfig,
}

impl RunSpec {
    pub fn run_seed(&self) -> u64 {
        replication_seed(self.seed, self.replication)
    }

    pub fn is_transport(&self) -> bool {
        self.proposal == ProposalName::Flow
    }

    pub fn proposal_spec(&self) -> ProposalSpec {
        let kind = match self.proposal {
            ProposalName::ClassicRw => ProposalKind::ClassicRw,
            ProposalName::ClassicIndependence => ProposalKind::ClassicIndependence,
            ProposalName::Mixture => ProposalKind::Mixture(self.components),
            ProposalName::Flow => ProposalKind::Flow(self.flow.clone()),
        };
        ProposalSpec { kind, defensive_eta: self.defensive_eta, fallback: self.fallback }
    }

    pub fn smc_config(&self, workers: usize) -> SmcConfig {
        SmcConfig {
            n_particles: self.n_particles,
            n_train: self.n_train,
            n_test: self.n_test,
            omega: self.omega,
            time_budget_s: self.time_budget_s,
            max_iterations: self.max_iterations,
            target_epsilon: self.target_epsilon,
            training_mode: self.training_set,
            kernel: KernelConfig { family: self.kernel, r: self.r },
            proposal: self.proposal_spec(),
            workers,
        }
    }

    /// Short identifier used in file names.
    pub fn label(&self) -> String {
        format!("{}_{}_{}_rep{}", self.model, self.kernel.label(), self.proposal_spec().label(), self.replication)
            .replace(['+', ' ', '/'], "-")
    }

    /// Reason this combination may not run, if any.
    pub fn incompatibility(&self, allow_inefficient: bool) -> Option<String> {
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return Some(format!("unknown model {:?}", self.model));
        }
        let spec = self.proposal_spec();
        if self.kernel.requires_independence() && !spec.is_independence() {
            return Some(format!("{} requires an independence proposal", self.kernel.label()));
        }
        if self.kernel == KernelFamily::RHitSingle && !allow_inefficient {
            return Some("r_hit_single needs --allow-inefficient".into());
        }
        if self.defensive_eta.is_some() && !spec.is_independence() {
            return Some("defensive wrapping needs an independence proposal".into());
        }
        if self.fallback && !self.is_transport() {
            return Some("fallback is only available with the flow proposal".into());
        }
        None
    }
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub runs: Vec<RunSpec>,
}

const GRID_KEYS: [&str; 10] = [
    "model",
    "kernel",
    "r",
    "proposal",
    "components",
    "defensive_eta",
    "fallback",
    "training_set",
    "omega",
    "n_particles",
];

/// Parses and expands a configuration; replications vary fastest, then the
/// grid keys in reverse name order. Replication indices start at the
/// `[run]` table's `replication` (default 0).
pub fn parse_experiment(text: &str) -> Result<ExperimentFile, HarnessError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    for key in doc.keys() {
        if key != "run" && key != "grid" {
            return Err(HarnessError::Config(format!("unknown section [{key}]")));
        }
    }
    let mut base = match doc.get("run") {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(HarnessError::Config("[run] must be a table".into())),
        None => return Err(HarnessError::Config("missing [run] section".into())),
    };
    let replications = match base.remove("replications") {
        None => 1,
        Some(toml::Value::Integer(n)) if n >= 1 => n as u64,
        Some(v) => return Err(HarnessError::Config(format!("run.replications: expected a positive integer, got {v}"))),
    };
    // an explicit replication index offsets the expanded ones
    let first_rep = match base.remove("replication") {
        None => 0,
        Some(toml::Value::Integer(n)) if n >= 0 => n as u64,
        Some(v) => return Err(HarnessError::Config(format!("run.replication: expected a non-negative integer, got {v}"))),
    };

    let mut axes: Vec<(String, Vec<toml::Value>)> = Vec::new();
    if let Some(g) = doc.get("grid") {
        let toml::Value::Table(g) = g else {
            return Err(HarnessError::Config("[grid] must be a table".into()));
        };
        for (k, v) in g {
            if !GRID_KEYS.contains(&k.as_str()) {
                return Err(HarnessError::Config(format!("grid.{k}: not a grid key (allowed: {})", GRID_KEYS.join(", "))));
            }
            match v {
                toml::Value::Array(a) if !a.is_empty() => axes.push((k.clone(), a.clone())),
                _ => return Err(HarnessError::Config(format!("grid.{k}: expected a non-empty array"))),
            }
        }
    }

    let mut cells: Vec<toml::Table> = vec![base];
    for (key, values) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    let mut runs = Vec::with_capacity(cells.len() * replications as usize);
    for (ci, cell) in cells.into_iter().enumerate() {
        for rep in 0..replications {
            let mut t = cell.clone();
            t.insert("replication".into(), toml::Value::Integer((first_rep + rep) as i64));
            let spec: RunSpec = toml::Value::Table(t)
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::Config(format!("run (grid cell {}): {}", ci + 1, e.message())))?;
            validate_values(&spec)?;
            runs.push(spec);
        }
    }
    Ok(ExperimentFile { runs })
}

fn validate_values(s: &RunSpec) -> Result<(), HarnessError> {
    let bad = |m: String| Err(HarnessError::Config(m));
    if !(s.omega > 0.0 && s.omega <= 1.0) {
        return bad(format!("run.omega: {} is outside (0, 1]", s.omega));
    }
    if let Some(eta) = s.defensive_eta {
        if !(0.0..=1.0).contains(&eta) {
            return bad(format!("run.defensive_eta: {eta} is outside [0, 1]"));
        }
    }
    if s.time_budget_s.is_some_and(|b| !(b >= 0.0)) {
        return bad("run.time_budget_s: must be non-negative".into());
    }
    if s.r == 0 {
        return bad("run.r: must be at least 1".into());
    }
    if matches!(s.kernel, KernelFamily::RHitSingle | KernelFamily::RHitMulti) && s.r < 2 {
        return bad(format!("run.r: {} needs r >= 2", s.kernel.label()));
    }
    if s.time_budget_s.is_none() && s.max_iterations.is_none() && s.target_epsilon.is_none() {
        return bad("run: set at least one of time_budget_s, max_iterations, target_epsilon".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
[run]
kernel = "one_hit"
proposal = "mixture"
components = 3
max_iterations = 2
seed = 5
replications = 3

[grid]
model = ["gm", "quadratic"]
proposal = ["mixture", "classic_independence"]
"#;

    #[test]
    fn explicit_replication_offsets_the_expansion() {
        let f = parse_experiment("[run]\nmodel = \"gm\"\nkernel = \"one_hit\"\nproposal = \"mixture\"\nmax_iterations = 1\nreplication = 4\nreplications = 2\n").unwrap();
        let reps: Vec<u64> = f.runs.iter().map(|r| r.replication).collect();
        assert_eq!(reps, vec![4, 5]);
        assert_ne!(f.runs[0].run_seed(), f.runs[1].run_seed());
    }

    #[test]
    fn grid_expands_with_shared_seeds() {
        let f = parse_experiment(GRID).unwrap();
        assert_eq!(f.runs.len(), 12);
        for a in &f.runs {
            for b in &f.runs {
                if a.replication == b.replication {
                    assert_eq!(a.run_seed(), b.run_seed());
                } else {
                    assert_ne!(a.run_seed(), b.run_seed());
                }
            }
        }
    }

    #[test]
    fn unknown_keys_are_reported() {
        let e = parse_experiment("[run]\nmodel = \"gm\"\nkernel = \"one_hit\"\nproposal = \"flow\"\nmax_iterations = 1\nbogus = 1\n")
            .unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = parse_experiment("[run]\nmodel = \"gm\"\n[grid]\nseed = [1]\n").unwrap_err();
        assert!(e.to_string().contains("grid.seed"));
    }

    #[test]
    fn compatibility_matrix() {
        let mut s = parse_experiment(GRID).unwrap().runs[0].clone();
        s.kernel = KernelFamily::IndOneHit;
        s.proposal = ProposalName::ClassicRw;
        assert!(s.incompatibility(true).is_some());
        for p in [ProposalName::ClassicIndependence, ProposalName::Mixture, ProposalName::Flow] {
            s.proposal = p;
            assert!(s.incompatibility(false).is_none());
        }
        s.kernel = KernelFamily::RHitSingle;
        assert!(s.incompatibility(false).is_some());
        assert!(s.incompatibility(true).is_none());
        for k in [KernelFamily::AbcMh, KernelFamily::OneHit, KernelFamily::RHitMulti] {
            s.kernel = k;
            s.proposal = ProposalName::ClassicRw;
            assert!(s.incompatibility(false).is_none());
        }
    }

    #[test]
    fn components_accept_auto() {
        let f = parse_experiment(
            "[run]\nmodel = \"gm\"\nkernel = \"abc_mh\"\nproposal = \"mixture\"\ncomponents = \"auto\"\nmax_iterations = 1\n",
        )
        .unwrap();
        assert_eq!(f.runs[0].components, MixtureComponents::Auto);
    }
}
