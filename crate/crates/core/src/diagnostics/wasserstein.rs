//! Exact Wasserstein distance between two empirical measures with uniform
//! weights.
//!
//! The transport problem is solved by a primal network simplex on the
//! complete bipartite graph. Supplies are scaled to integers (`m` per source,
//! `n` per sink) and perturbed symbolically: source supplies get `+δ` and the
//! last sink `+nδ`, with `δ` an infinitesimal. Flows are carried as
//! `(integer, multiple of δ)` pairs compared lexicographically, so no basis
//! is ever degenerate and the method cannot cycle. The reported cost uses the
//! integer parts only.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::DiagnosticsError;

/// Exponent `p` of the ground cost `|x - y|^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WassersteinOrder {
    #[default]
    One,
    Two,
}

impl WassersteinOrder {
    fn p(self) -> i32 {
        match self {
            WassersteinOrder::One => 1,
            WassersteinOrder::Two => 2,
        }
    }
}

/// `integer + delta * eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Flow {
    base: i64,
    eps: i64,
}

impl Flow {
    fn add(self, o: Flow) -> Flow {
        Flow { base: self.base + o.base, eps: self.eps + o.eps }
    }
    fn sub(self, o: Flow) -> Flow {
        Flow { base: self.base - o.base, eps: self.eps - o.eps }
    }
    fn is_positive(self) -> bool {
        self.base > 0 || (self.base == 0 && self.eps > 0)
    }
}

impl PartialOrd for Flow {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Flow {
    fn cmp(&self, o: &Self) -> Ordering {
        self.base.cmp(&o.base).then(self.eps.cmp(&o.eps))
    }
}

fn check(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, DiagnosticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(DiagnosticsError::EmptySample);
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != d) {
        return Err(DiagnosticsError::DimensionMismatch);
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    Ok(d)
}

/// Exact `W_p` between the uniform empirical measures on `a` and `b`.
/// One-dimensional inputs take the quantile-function path.
pub fn wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], order: WassersteinOrder) -> Result<f64, DiagnosticsError> {
    if check(a, b)? == 1 {
        let x: Vec<f64> = a.iter().map(|r| r[0]).collect();
        let y: Vec<f64> = b.iter().map(|r| r[0]).collect();
        return Ok(wasserstein_1d(&x, &y, order));
    }
    wasserstein_simplex(a, b, order)
}

/// `W_p` on the real line: `int_0^1 |F^-1(t) - G^-1(t)|^p dt` over the
/// merged quantile breakpoints `k/n` and `l/m`.
pub fn wasserstein_1d(x: &[f64], y: &[f64], order: WassersteinOrder) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as u64, ys.len() as u64);
    let p = order.p();
    // breakpoints in units of 1/(n m): source k ends at (k+1) m, sink l at (l+1) n
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0u64;
    let mut total = 0.0;
    while i < xs.len() && j < ys.len() {
        let end_i = (i as u64 + 1) * m;
        let end_j = (j as u64 + 1) * n;
        let end = end_i.min(end_j);
        total += (end - pos) as f64 * (xs[i] - ys[j]).abs().powi(p);
        pos = end;
        if end_i == end {
            i += 1;
        }
        if end_j == end {
            j += 1;
        }
    }
    (total / (n * m) as f64).powf(1.0 / p as f64)
}

/// General solver; also valid in one dimension.
pub fn wasserstein_simplex(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    order: WassersteinOrder,
) -> Result<f64, DiagnosticsError> {
    check(a, b)?;
    let p = order.p();
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|x| {
            b.iter().map(move |y| {
                let d2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
                if p == 2 {
                    d2
                } else {
                    d2.sqrt()
                }
            })
        })
        .collect();
    let total = transport_cost(n, m, &cost)?;
    Ok((total / (n as f64 * m as f64)).max(0.0).powf(1.0 / p as f64))
}

/// Basis arc `source -> sink` with its flow.
#[derive(Debug, Clone, Copy)]
struct Arc {
    i: usize,
    j: usize,
    flow: Flow,
}

struct Tree {
    parent: Vec<usize>,
    /// Basis arc linking a node to its parent.
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
}

const NONE: usize = usize::MAX;

/// Minimum of `sum x_ij c_ij` subject to row sums `m` and column sums `n`.
fn transport_cost(n: usize, m: usize, cost: &[f64]) -> Result<f64, DiagnosticsError> {
    let nodes = n + m;
    let supply: Vec<Flow> = (0..n).map(|_| Flow { base: m as i64, eps: 1 }).collect();
    let demand: Vec<Flow> = (0..m)
        .map(|j| Flow { base: n as i64, eps: if j == m - 1 { n as i64 } else { 0 } })
        .collect();

    // north-west corner start; perturbation keeps every basic flow positive
    let mut arcs: Vec<Arc> = Vec::with_capacity(nodes - 1);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut s, mut d) = (supply[0], demand[0]);
    loop {
        let f = s.min(d);
        arcs.push(Arc { i, j, flow: f });
        s = s.sub(f);
        d = d.sub(f);
        if i == n - 1 && j == m - 1 {
            break;
        }
        if s.is_positive() {
            j += 1;
            d = demand[j];
        } else {
            i += 1;
            s = supply[i];
        }
    }
    if arcs.len() != nodes - 1 || arcs.iter().any(|a| !a.flow.is_positive()) {
        return Err(DiagnosticsError::SolverFailure("initial basis is degenerate".into()));
    }

    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let n_arcs = n * m;
    let block = ((n_arcs as f64).sqrt().ceil() as usize).max(16).min(n_arcs);
    let mut cursor = 0usize;
    let max_pivots = 50 * n_arcs + 1000;

    let mut tree = build_tree(nodes, n, &arcs, cost, m);
    for _ in 0..max_pivots {
        // block search pricing: most negative reduced cost within the first
        // block that has one
        let mut entering = None;
        let mut scanned = 0;
        while scanned < n_arcs && entering.is_none() {
            let mut best = -tol;
            let stop = (scanned + block).min(n_arcs);
            while scanned < stop {
                let k = cursor;
                cursor = if cursor + 1 == n_arcs { 0 } else { cursor + 1 };
                scanned += 1;
                let (ii, jj) = (k / m, k % m);
                let rc = cost[k] - tree.potential[ii] - tree.potential[n + jj];
                if rc < best {
                    best = rc;
                    entering = Some((ii, jj));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let total: f64 = arcs.iter().map(|a| a.flow.base as f64 * cost[a.i * m + a.j]).sum();
            return Ok(total);
        };

        // cycle: entering arc (+), then the tree path from sink ej back to source ei
        let path = tree_path(&tree, n + ej, ei);
        let mut leave = NONE;
        let mut theta = Flow { base: i64::MAX, eps: 0 };
        for (k, &arc) in path.iter().enumerate() {
            if k % 2 == 0 && arcs[arc].flow < theta {
                theta = arcs[arc].flow;
                leave = arc;
            }
        }
        if leave == NONE {
            return Err(DiagnosticsError::SolverFailure("unbounded pivot".into()));
        }
        for (k, &arc) in path.iter().enumerate() {
            arcs[arc].flow = if k % 2 == 0 { arcs[arc].flow.sub(theta) } else { arcs[arc].flow.add(theta) };
        }
        arcs[leave] = Arc { i: ei, j: ej, flow: theta };
        tree = build_tree(nodes, n, &arcs, cost, m);
    }
    Err(DiagnosticsError::SolverFailure("pivot limit reached".into()))
}

fn build_tree(nodes: usize, n: usize, arcs: &[Arc], cost: &[f64], m: usize) -> Tree {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (k, a) in arcs.iter().enumerate() {
        adj[a.i].push(k);
        adj[n + a.j].push(k);
    }
    let mut t = Tree {
        parent: vec![NONE; nodes],
        parent_arc: vec![NONE; nodes],
        depth: vec![0; nodes],
        potential: vec![0.0; nodes],
    };
    let mut seen = vec![false; nodes];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &k in &adj[u] {
            let a = arcs[k];
            let (src, snk) = (a.i, n + a.j);
            let v = if u == src { snk } else { src };
            if seen[v] {
                continue;
            }
            seen[v] = true;
            t.parent[v] = u;
            t.parent_arc[v] = k;
            t.depth[v] = t.depth[u] + 1;
            // u_i + v_j = c_ij on basic arcs
            let c = cost[a.i * m + a.j];
            t.potential[v] = c - t.potential[u];
            queue.push_back(v);
        }
    }
    t
}

/// Basis arcs on the tree path from `from` to `to`, in walking order.
fn tree_path(t: &Tree, from: usize, to: usize) -> Vec<usize> {
    let (mut a, mut b) = (from, to);
    let mut head = Vec::new();
    let mut tail = Vec::new();
    while t.depth[a] > t.depth[b] {
        head.push(t.parent_arc[a]);
        a = t.parent[a];
    }
    while t.depth[b] > t.depth[a] {
        tail.push(t.parent_arc[b]);
        b = t.parent[b];
    }
    while a != b {
        head.push(t.parent_arc[a]);
        a = t.parent[a];
        tail.push(t.parent_arc[b]);
        b = t.parent[b];
    }
    head.extend(tail.into_iter().rev());
    head
}
