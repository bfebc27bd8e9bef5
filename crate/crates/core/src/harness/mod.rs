//! Experiment harness: configuration, grid execution, run records,
//! summary tables, trace plots and reference samples.

pub mod config;
pub mod plot;
pub mod record;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{merge_traces, trace_aggregate, Metric, SummaryTable};
use crate::model::{
    builtin_target, reference_mh_sampler, write_matrix_csv, CsvMatrix, GmExactPosterior, ModelError,
    ReferenceOptions, GM_GRID_POINTS,
};
use crate::rng::{substream, tag};

pub use config::{parse_experiment, ExperimentFile, ProposalName, RunSpec};
pub use record::{execute, execute_on, load_target, read_record, write_record, RunRecord, RunStatus, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_ITERATION: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(String),
    #[error("record: {0}")]
    Record(String),
    #[error("no files match {0:?}")]
    EmptyGlob(String),
    #[error("{0}")]
    Unsupported(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Model(_) | HarnessError::Unsupported(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub seed: u64,
    pub record: Option<PathBuf>,
    pub status: Option<RunStatus>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub entries: Vec<ManifestEntry>,
}

impl GridOutcome {
    pub fn completed(&self) -> usize {
        self.entries.iter().filter(|e| e.status == Some(RunStatus::Completed)).count()
    }

    pub fn exit_code(&self) -> i32 {
        if self.completed() > 0 {
            EXIT_OK
        } else {
            EXIT_NO_ITERATION
        }
    }
}

/// Executes every run of a configuration file, writing one record and one
/// trace CSV per run plus `manifest.json`. Incompatible cells are skipped
/// with their reason; failing runs are recorded and the grid continues.
pub fn run_experiment(
    config_text: &str,
    out_dir: &Path,
    workers: usize,
    allow_inefficient: bool,
    mut progress: impl FnMut(&ManifestEntry),
) -> Result<GridOutcome, HarnessError> {
    let file = parse_experiment(config_text)?;
    let mut entries = Vec::with_capacity(file.runs.len());
    for (i, spec) in file.runs.iter().enumerate() {
        let label = format!("run{:03}_{}", i + 1, spec.label());
        let entry = if let Some(reason) = spec.incompatibility(allow_inefficient) {
            ManifestEntry { label, seed: spec.run_seed(), record: None, status: None, skipped: Some(reason) }
        } else {
            let rec = execute(spec, workers)?;
            let path = write_record(out_dir, &label, &rec)?;
            ManifestEntry { label, seed: rec.seed, record: Some(path), status: Some(rec.status), skipped: None }
        };
        progress(&entry);
        entries.push(entry);
    }
    let outcome = GridOutcome { entries };
    let json = serde_json::to_string_pretty(&outcome).map_err(|e| HarnessError::Io(e.to_string()))?;
    record::write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(outcome)
}

/// Records matching a glob pattern, in path order.
pub fn load_records(pattern: &str) -> Result<Vec<(PathBuf, RunRecord)>, HarnessError> {
    let paths = glob::glob(pattern).map_err(|e| HarnessError::Config(format!("bad pattern: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| HarnessError::Io(e.to_string()))?;
        if p.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        let r = read_record(&p)?;
        out.push((p, r));
    }
    if out.is_empty() {
        return Err(HarnessError::EmptyGlob(pattern.to_string()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Mean final-epsilon or loss table over the completed records.
pub fn summarize(records: &[RunRecord], metric: Metric) -> Result<SummaryTable, HarnessError> {
    let digests: Vec<_> = records.iter().filter_map(RunRecord::digest).collect();
    let groups = trace_aggregate(&digests).map_err(|e| HarnessError::Record(e.to_string()))?;
    Ok(SummaryTable::from_groups(&groups, metric))
}

/// Writes the four trace figures into `out_dir`; returns their paths.
pub fn plot(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let digests: Vec<_> = records.iter().filter_map(RunRecord::digest).collect();
    if digests.is_empty() {
        return Err(HarnessError::Record("no completed runs to plot".into()));
    }
    let series = merge_traces(&digests);
    let mut paths = Vec::new();
    for fig in plot::Figure::ALL {
        let p = out_dir.join(fig.file_name());
        record::write_atomic(&p, &plot::render(&series, fig))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reference posterior sample: exact for `gm`, Metropolis-Hastings on the
/// exact likelihood for `quadratic` and `slcp`.
pub fn reference_sample(model: &str, n: usize, seed: u64) -> Result<CsvMatrix, HarnessError> {
    let target = builtin_target(model)?;
    let (rows, comments) = match model {
        "gm" => {
            let post = GmExactPosterior::new(target.y0_raw[0], GM_GRID_POINTS);
            let mut rng = substream(seed, &[tag::REFERENCE]);
            let rows = post.sample(n, &mut rng).into_iter().map(|v| vec![v]).collect();
            (rows, vec![format!("exact posterior sample, seed = {seed}")])
        }
        "quadratic" | "slcp" => {
            let opts = ReferenceOptions::default();
            let s = reference_mh_sampler(&target, n, seed, &opts)?;
            let note = format!(
                "random-walk Metropolis reference, seed = {seed}, chains = {}, acceptance = {:.3}",
                opts.chains, s.acceptance_rate
            );
            (s.draws, vec![note])
        }
        other => {
            return Err(HarnessError::Unsupported(format!(
                "model {other:?} has no tractable likelihood; supply a reference sample file instead"
            )))
        }
    };
    let header = (1..=target.model.dim_theta()).map(|i| format!("theta{i}")).collect();
    Ok(CsvMatrix { comments, header, rows })
}

pub fn write_reference(model: &str, n: usize, seed: u64, out: &Path) -> Result<(), HarnessError> {
    let m = reference_sample(model, n, seed)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    write_matrix_csv(out, &m)?;
    Ok(())
}
