//! Output-quality metrics and cross-run aggregation.

mod wasserstein;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smc::IterationTrace;

pub use wasserstein::{wasserstein, wasserstein_1d, wasserstein_simplex, WassersteinOrder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("samples have different dimensions")]
    DimensionMismatch,
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("transport solver failed: {0}")]
    SolverFailure(String),
    #[error("run has no complete iteration")]
    NoCompleteIteration,
    #[error("nothing to aggregate")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub final_epsilon: f64,
    pub final_iteration: usize,
    pub wasserstein: Option<f64>,
    pub n_output: usize,
    pub elapsed_s: f64,
}

/// Report for the last complete iteration; the Wasserstein distance is
/// computed only when a reference sample is given.
pub fn build_report(
    traces: &[IterationTrace],
    sample: &[Vec<f64>],
    elapsed_s: f64,
    reference: Option<&[Vec<f64>]>,
    order: WassersteinOrder,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    let last = traces.last().ok_or(DiagnosticsError::NoCompleteIteration)?;
    let wasserstein = reference.map(|r| wasserstein(sample, r, order)).transpose()?;
    Ok(DiagnosticsReport {
        final_epsilon: last.epsilon,
        final_iteration: last.t,
        wasserstein,
        n_output: sample.len(),
        elapsed_s,
    })
}

/// Grouping key for summary tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub model: String,
    pub kernel: String,
    pub proposal: String,
    /// Any further setting that separates otherwise equal cells.
    pub tuning: String,
}

/// The parts of one run that aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub key: GroupKey,
    pub final_epsilon: f64,
    pub wasserstein: Option<f64>,
    pub traces: Vec<IterationTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub runs: usize,
    pub mean_final_epsilon: f64,
    /// Mean over the runs that have a distance; `None` when none do.
    pub mean_wasserstein: Option<f64>,
}

/// Per-group means, ordered by key.
pub fn trace_aggregate(runs: &[RunDigest]) -> Result<Vec<GroupSummary>, DiagnosticsError> {
    if runs.is_empty() {
        return Err(DiagnosticsError::EmptyGroup);
    }
    let mut groups: BTreeMap<&GroupKey, Vec<&RunDigest>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.key).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, rs)| {
            let eps = rs.iter().map(|r| r.final_epsilon).sum::<f64>() / rs.len() as f64;
            let ws: Vec<f64> = rs.iter().filter_map(|r| r.wasserstein).collect();
            let mean_wasserstein = (!ws.is_empty()).then(|| ws.iter().sum::<f64>() / ws.len() as f64);
            GroupSummary { key: key.clone(), runs: rs.len(), mean_final_epsilon: eps, mean_wasserstein }
        })
        .collect())
}

/// One plotted line: all runs sharing a kernel and proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub label: String,
    pub runs: Vec<Vec<IterationTrace>>,
}

/// Traces grouped by `(kernel, proposal)` for the trace figures.
pub fn merge_traces(runs: &[RunDigest]) -> Vec<TraceSeries> {
    let mut by: BTreeMap<String, Vec<Vec<IterationTrace>>> = BTreeMap::new();
    for r in runs {
        let label = format!("{} / {}", r.key.kernel, r.key.proposal);
        by.entry(label).or_default().push(r.traces.clone());
    }
    by.into_iter().map(|(label, runs)| TraceSeries { label, runs }).collect()
}

/// Three significant figures in scientific notation, e.g. `5.85e-03`.
pub fn format_sig3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.2e}");
    let (mant, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// Rank (1 = smallest) of each entry among the row's values, for the best
/// three; missing or non-finite entries are unranked. Ties keep column order.
pub fn rank_flags(row: &[Option<f64>]) -> Vec<Option<usize>> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_some_and(f64::is_finite)).collect();
    idx.sort_by(|&a, &b| row[a].unwrap().total_cmp(&row[b].unwrap()));
    let mut out = vec![None; row.len()];
    for (rank, &i) in idx.iter().take(3).enumerate() {
        out[i] = Some(rank + 1);
    }
    out
}

/// Which mean a summary table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Epsilon,
    Loss,
}

/// Rows are `model / kernel`, columns proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub metric: Metric,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl SummaryTable {
    pub fn from_groups(groups: &[GroupSummary], metric: Metric) -> Self {
        let col_name = |k: &GroupKey| {
            if k.tuning.is_empty() {
                k.proposal.clone()
            } else {
                format!("{} ({})", k.proposal, k.tuning)
            }
        };
        let mut columns: Vec<String> = groups.iter().map(|g| col_name(&g.key)).collect();
        columns.sort();
        columns.dedup();
        let mut rows: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        for g in groups {
            let row = rows
                .entry(format!("{} / {}", g.key.model, g.key.kernel))
                .or_insert_with(|| vec![None; columns.len()]);
            let c = columns.iter().position(|c| *c == col_name(&g.key)).expect("column");
            row[c] = match metric {
                Metric::Epsilon => Some(g.mean_final_epsilon),
                Metric::Loss => g.mean_wasserstein,
            };
        }
        Self { metric, columns, rows: rows.into_iter().collect() }
    }

    fn cell(v: Option<f64>, rank: Option<usize>) -> String {
        match (v, rank) {
            (None, _) => "-".to_string(),
            (Some(x), None) => format_sig3(x),
            (Some(x), Some(r)) => format!("{} [{r}]", format_sig3(x)),
        }
    }

    /// CSV with one extra `rank` column per value column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for c in &self.columns {
            out.push_str(&format!(",{},{}", quote(c), quote(&format!("{c} rank"))));
        }
        out.push('\n');
        for (name, vals) in &self.rows {
            out.push_str(&quote(name));
            for (v, r) in vals.iter().zip(rank_flags(vals)) {
                let v = v.map(format_sig3).unwrap_or_default();
                let r = r.map(|r| r.to_string()).unwrap_or_default();
                out.push_str(&format!(",{v},{r}"));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned plain text; `[1]`, `[2]`, `[3]` mark the best entries per row.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = Vec::new();
        let title = match self.metric {
            Metric::Epsilon => "mean final epsilon",
            Metric::Loss => "mean Wasserstein loss",
        };
        let mut head = vec![title.to_string()];
        head.extend(self.columns.iter().cloned());
        cells.push(head);
        for (name, vals) in &self.rows {
            let mut line = vec![name.clone()];
            line.extend(vals.iter().zip(rank_flags(vals)).map(|(v, r)| Self::cell(*v, r)));
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &cells {
            let parts: Vec<String> =
                line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
