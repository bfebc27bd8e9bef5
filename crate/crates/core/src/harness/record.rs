//! Run execution and the persisted run record.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{build_report, DiagnosticsReport, GroupKey, RunDigest};
use crate::model::{builtin_target, read_matrix_csv, target_from_observed_file, ObservedTarget};
use crate::smc::{run_abc_smc, run_transport_abc, IterationTrace, SmcError, StopReason};

use super::config::RunSpec;
use super::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum RunStatus {
    Completed,
    /// No iteration finished inside the budget.
    NoCompleteIteration,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub library_version: String,
    pub config: RunSpec,
    /// Seed the run actually used.
    pub seed: u64,
    pub status: RunStatus,
    pub stop_reason: Option<StopReason>,
    pub completed_iterations: usize,
    pub traces: Vec<IterationTrace>,
    /// Reported parameter sample (the train population for flow runs).
    pub output: Vec<Vec<f64>>,
    /// Test population of a flow run; excluded from diagnostics.
    pub test_output: Option<Vec<Vec<f64>>>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunRecord {
    pub fn final_epsilon(&self) -> Option<f64> {
        self.traces.last().map(|t| t.epsilon)
    }

    pub fn digest(&self) -> Option<RunDigest> {
        let d = self.diagnostics.as_ref()?;
        let mut tuning = Vec::new();
        if let Some(eta) = self.config.defensive_eta {
            tuning.push(format!("eta={eta}"));
        }
        if self.config.fallback {
            tuning.push("fallback".to_string());
        }
        if self.config.training_set != Default::default() {
            tuning.push("train=A".to_string());
        }
        let mut proposal = self.config.proposal_spec().label();
        if let Some(i) = proposal.find('+') {
            proposal.truncate(i);
        }
        Some(RunDigest {
            key: GroupKey {
                model: self.config.model.clone(),
                kernel: self.config.kernel.label().to_string(),
                proposal,
                tuning: tuning.join(" "),
            },
            final_epsilon: d.final_epsilon,
            wasserstein: d.wasserstein,
            traces: self.traces.clone(),
        })
    }

    /// Settings that rerun this record deterministically: the same seed, no
    /// clock, and exactly the completed number of iterations.
    pub fn replay_spec(&self) -> RunSpec {
        let mut s = self.config.clone();
        s.time_budget_s = None;
        s.target_epsilon = None;
        s.max_iterations = Some(self.completed_iterations);
        s
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let r: RunRecord = serde_json::from_str(text).map_err(|e| HarnessError::Record(e.to_string()))?;
        if r.schema != SCHEMA_VERSION {
            return Err(HarnessError::Record(format!("unsupported schema {}", r.schema)));
        }
        Ok(r)
    }

    pub fn trace_csv(&self) -> String {
        let mut out = IterationTrace::CSV_HEADER.join(",");
        out.push('\n');
        for t in &self.traces {
            out.push_str(&t.csv_row().join(","));
            out.push('\n');
        }
        out
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Loads the observed target (and reference sample, when configured).
pub fn load_target(spec: &RunSpec) -> Result<ObservedTarget, HarnessError> {
    let target = match &spec.observed {
        Some(p) => target_from_observed_file(&spec.model, p)?,
        None => builtin_target(&spec.model)?,
    };
    match &spec.reference {
        Some(p) => Ok(target.with_reference(read_matrix_csv(p)?.rows)?),
        None => Ok(target),
    }
}

/// Runs one configuration; every outcome except a bad configuration comes
/// back as a record.
pub fn execute(spec: &RunSpec, workers: usize) -> Result<RunRecord, HarnessError> {
    let target = load_target(spec)?;
    execute_on(spec, &target, workers)
}

pub fn execute_on(spec: &RunSpec, target: &ObservedTarget, workers: usize) -> Result<RunRecord, HarnessError> {
    let started_at = now();
    let cfg = spec.smc_config(workers);
    let seed = spec.run_seed();
    let result = if spec.is_transport() {
        run_transport_abc(target, &cfg, seed)
    } else {
        run_abc_smc(target, &cfg, seed)
    };
    let mut record = RunRecord {
        schema: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: spec.clone(),
        seed,
        status: RunStatus::Completed,
        stop_reason: None,
        completed_iterations: 0,
        traces: Vec::new(),
        output: Vec::new(),
        test_output: None,
        diagnostics: None,
        started_at,
        finished_at: String::new(),
    };
    match result {
        Ok(out) => {
            let sample = out.thetas();
            let diagnostics = build_report(
                &out.traces,
                &sample,
                out.elapsed_s,
                target.reference.as_deref(),
                spec.wasserstein_order,
            )
            .map_err(|e| HarnessError::Record(e.to_string()))?;
            record.stop_reason = Some(out.stop_reason);
            record.completed_iterations = out.completed_iterations;
            record.traces = out.traces;
            record.output = sample;
            record.test_output = out.test_population.map(|ps| ps.into_iter().map(|p| p.theta).collect());
            record.diagnostics = Some(diagnostics);
        }
        Err(SmcError::InvalidConfig(m)) => return Err(HarnessError::Config(m)),
        Err(SmcError::BudgetExhausted) => record.status = RunStatus::NoCompleteIteration,
        Err(e) => record.status = RunStatus::Failed(e.to_string()),
    }
    record.finished_at = now();
    Ok(record)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes `<stem>.json` and `<stem>.trace.csv`; returns the JSON path.
pub fn write_record(dir: &Path, stem: &str, r: &RunRecord) -> Result<PathBuf, HarnessError> {
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&json, &r.to_json()?)?;
    write_atomic(&dir.join(format!("{stem}.trace.csv")), &r.trace_csv())?;
    Ok(json)
}

pub fn read_record(path: &Path) -> Result<RunRecord, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    RunRecord::from_json(&text)
}
