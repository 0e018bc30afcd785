//! Wasserstein-1 distances between weighted point sets and 1-D laws.
//!
//! * exact quantile coupling on the line,
//! * exact assignment (shortest augmenting paths with dual potentials) for
//!   equal-size uniform samples, and a transportation solver for general weights,
//! * `|F_a - F_b|` integration for laws given by CDFs,
//! * sliced surrogate and nonparametric bootstrap intervals.

use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{usage, Error, Result};
use crate::quad::{adaptive, Adaptive};
use crate::rng::RngStream;
use crate::stats::{quantile_sorted, sort_floats};

/// Weighted point cloud with row-major points.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return usage("points must be a nonempty multiple of the dimension");
        }
        if points.iter().any(|v| !v.is_finite()) {
            return usage("points must be finite");
        }
        Ok(Self { dim, points, weights: None })
    }

    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::uniform(dim, points)?;
        if weights.len() != m.len() {
            return usage("one weight per point required");
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return usage("weights must be nonnegative");
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return usage("weights must sum to 1");
        }
        m.weights = Some(weights);
        Ok(m)
    }

    /// Single point of mass one.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::uniform(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Projection onto a direction, as a 1-D measure with the same weights.
    pub fn project(&self, dir: &[f64]) -> Self {
        let pts = self.points.chunks_exact(self.dim).map(|p| p.iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
        Self { dim: 1, points: pts, weights: self.weights.clone() }
    }

    /// Translate every point by `v`.
    pub fn shifted(&self, v: &[f64]) -> Self {
        let mut m = self.clone();
        for p in m.points.chunks_exact_mut(self.dim) {
            p.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        m
    }

    /// Rows `range` as a uniform measure.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Self::uniform(self.dim, self.points[start * self.dim..end * self.dim].to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum W1Method {
    Sorted1d,
    Assignment,
    Transport,
    Sliced,
    CdfIntegral,
}

impl W1Method {
    pub fn as_str(self) -> &'static str {
        match self {
            W1Method::Sorted1d => "sorted_1d",
            W1Method::Assignment => "assignment",
            W1Method::Transport => "transport",
            W1Method::Sliced => "sliced",
            W1Method::CdfIntegral => "cdf_integral",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W1Result {
    pub value: f64,
    pub method: W1Method,
    pub stderr: Option<f64>,
}

/// Exact W1 on the line via the quantile coupling.
pub fn w1_sorted_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W1Result> {
    if a.dim != 1 || b.dim != 1 {
        return usage("w1_sorted_1d needs one-dimensional measures");
    }
    let value = if a.is_uniform() && b.is_uniform() && a.len() == b.len() {
        let mut x = a.points.clone();
        let mut y = b.points.clone();
        sort_floats(&mut x);
        sort_floats(&mut y);
        x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
    } else {
        cdf_gap_integral(a, b)
    };
    Ok(W1Result { value, method: W1Method::Sorted1d, stderr: None })
}

/// Uniform equal-size W1 between raw 1-D samples (sorts copies).
pub fn w1_sorted_samples(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut x = x.to_vec();
    let mut y = y.to_vec();
    sort_floats(&mut x);
    sort_floats(&mut y);
    x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}

fn cdf_gap_integral(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut ev: Vec<(f64, f64)> = Vec::with_capacity(a.len() + b.len());
    ev.extend((0..a.len()).map(|i| (a.points[i], a.weight(i))));
    ev.extend((0..b.len()).map(|i| (b.points[i], -b.weight(i))));
    ev.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
    let mut gap = 0.0;
    let mut total = 0.0;
    for k in 0..ev.len() {
        gap += ev[k].1;
        if k + 1 < ev.len() {
            total += gap.abs() * (ev[k + 1].0 - ev[k].0);
        }
    }
    total
}

fn euclid(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Optimal assignment with dual certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub col_for_row: Vec<usize>,
    pub cost: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Assignment {
    pub fn dual_objective(&self) -> f64 {
        self.u.iter().sum::<f64>() + self.v.iter().sum::<f64>()
    }
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix (row-major)
/// by successive shortest augmenting paths with potentials.
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<Assignment> {
    if cost.len() != n * n {
        return usage("cost matrix must be n x n");
    }
    const NONE: usize = usize::MAX;
    let mut u = alloc::vec![0.0; n];
    let mut v = alloc::vec![0.0; n];
    let mut spc = alloc::vec![f64::INFINITY; n];
    let mut path = alloc::vec![NONE; n];
    let mut col4row = alloc::vec![NONE; n];
    let mut row4col = alloc::vec![NONE; n];
    let mut sr = alloc::vec![false; n];
    let mut sc = alloc::vec![false; n];
    let mut remaining = alloc::vec![0usize; n];
    let mut visited_rows: Vec<usize> = Vec::with_capacity(n);
    let mut visited_cols: Vec<usize> = Vec::with_capacity(n);

    // Column reduction: v_j = min_i c_ij keeps reduced costs nonnegative, and
    // each column's argmin row can be matched immediately if still free.
    for j in 0..n {
        let (mut best, mut arg) = (f64::INFINITY, 0);
        for i in 0..n {
            let c = cost[i * n + j];
            if c < best {
                best = c;
                arg = i;
            }
        }
        v[j] = best;
        if col4row[arg] == NONE {
            col4row[arg] = j;
            row4col[j] = arg;
        }
    }

    for cur in 0..n {
        if col4row[cur] != NONE {
            continue;
        }
        let mut min_val = 0.0;
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = n - it - 1;
        }
        let mut num_rem = n;
        for &i in &visited_rows {
            sr[i] = false;
        }
        for &j in &visited_cols {
            sc[j] = false;
        }
        visited_rows.clear();
        visited_cols.clear();
        spc.iter_mut().for_each(|s| *s = f64::INFINITY);

        let mut sink = NONE;
        let mut i = cur;
        while sink == NONE {
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            sr[i] = true;
            visited_rows.push(i);
            let row = &cost[i * n..(i + 1) * n];
            let base = min_val - u[i];
            for (it, &j) in remaining[..num_rem].iter().enumerate() {
                let r = base + row[j] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                if spc[j] < lowest || (spc[j] == lowest && row4col[j] == NONE) {
                    lowest = spc[j];
                    index = it;
                }
            }
            min_val = lowest;
            if !min_val.is_finite() {
                return usage("assignment problem is infeasible (non-finite costs)");
            }
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            sc[j] = true;
            visited_cols.push(j);
            num_rem -= 1;
            remaining[index] = remaining[num_rem];
        }

        u[cur] += min_val;
        for &r in &visited_rows {
            if r != cur {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for &c in &visited_cols {
            v[c] -= min_val - spc[c];
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            core::mem::swap(&mut col4row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    let total = (0..n).map(|i| cost[i * n + col4row[i]]).sum();
    Ok(Assignment { col_for_row: col4row, cost: total, u, v })
}

/// Size limits for the exact solvers.
#[derive(Clone, Copy, Debug)]
pub struct AssignmentCaps {
    pub max_uniform_n: usize,
    pub max_arcs: usize,
}

impl Default for AssignmentCaps {
    fn default() -> Self {
        Self { max_uniform_n: 4096, max_arcs: 100_000 }
    }
}

pub fn w1_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W1Result> {
    w1_assignment_with_caps(a, b, AssignmentCaps::default())
}

/// Exact W1 with Euclidean cost. Equal-size uniform inputs use the assignment
/// solver; anything else goes through the transportation solver.
pub fn w1_assignment_with_caps(a: &EmpiricalMeasure, b: &EmpiricalMeasure, caps: AssignmentCaps) -> Result<W1Result> {
    if a.dim != b.dim {
        return usage("dimension mismatch");
    }
    let (n, m) = (a.len(), b.len());
    if a.is_uniform() && b.is_uniform() && n == m {
        if n > caps.max_uniform_n {
            return Err(Error::SizeCap { size: n, cap: caps.max_uniform_n });
        }
        let mut cost = alloc::vec![0.0; n * n];
        for i in 0..n {
            let p = a.point(i);
            for j in 0..n {
                cost[i * n + j] = euclid(p, b.point(j));
            }
        }
        let sol = solve_assignment(&cost, n)?;
        return Ok(W1Result { value: sol.cost / n as f64, method: W1Method::Assignment, stderr: None });
    }
    if n * m > caps.max_arcs {
        return Err(Error::SizeCap { size: n * m, cap: caps.max_arcs });
    }
    let plan = transport(a, b)?;
    Ok(W1Result { value: plan.cost, method: W1Method::Transport, stderr: None })
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// (source, sink, mass) triples with positive mass.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// Min-cost transportation between weighted measures by successive shortest
/// paths with Johnson potentials on the dense bipartite residual graph.
pub fn transport(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    let mut cost = alloc::vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = euclid(a.point(i), b.point(j));
        }
    }
    let mut supply = a.weights();
    let mut demand = b.weights();
    let mut flow = alloc::vec![0.0; n * m];
    let mut pot = alloc::vec![0.0; n + m];
    let eps = 1e-15;
    let nodes = n + m;
    let mut dist = alloc::vec![0.0; nodes];
    let mut prev = alloc::vec![usize::MAX; nodes];
    let mut done = alloc::vec![false; nodes];
    for _ in 0..4 * (n + m) + 10 {
        if supply.iter().all(|s| *s <= eps) || demand.iter().all(|d| *d <= eps) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for k in 0..nodes {
                if !done[k] && dist[k] < bd {
                    bd = dist[k];
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let rc = cost[i * m + j] + pot[i] - pot[n + j];
                    let nd = bd + rc.max(0.0);
                    if nd < dist[n + j] {
                        dist[n + j] = nd;
                        prev[n + j] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if flow[i * m + j] > eps {
                        let rc = -cost[i * m + j] + pot[n + j] - pot[i];
                        let nd = bd + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = best;
                        }
                    }
                }
            }
        }
        let mut sink = usize::MAX;
        let mut sd = f64::INFINITY;
        for j in 0..m {
            if demand[j] > eps && dist[n + j] < sd {
                sd = dist[n + j];
                sink = n + j;
            }
        }
        if sink == usize::MAX {
            return usage("transport problem infeasible");
        }
        for k in 0..nodes {
            pot[k] += dist[k].min(sd);
        }
        // bottleneck along the path
        let mut push = demand[sink - n];
        let mut k = sink;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p >= n {
                // backward arc sink p -> source k
                push = push.min(flow[k * m + (p - n)]);
            }
            k = p;
        }
        push = push.min(supply[k]);
        let mut k2 = sink;
        while prev[k2] != usize::MAX {
            let p = prev[k2];
            if p < n {
                flow[p * m + (k2 - n)] += push;
            } else {
                flow[k2 * m + (p - n)] -= push;
            }
            k2 = p;
        }
        supply[k] -= push;
        demand[sink - n] -= push;
    }
    let mut flows = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > eps {
                flows.push((i, j, f));
                total += f * cost[i * m + j];
            }
        }
    }
    Ok(TransportPlan { flows, cost: total })
}

/// A one-dimensional law given by its distribution function.
pub trait Cdf1d {
    fn cdf(&self, x: f64) -> f64;

    /// `(int_x^inf (1 - F), error)` when known analytically.
    fn upper_tail_integral(&self, _x: f64) -> Option<(f64, f64)> {
        None
    }

    /// `(int_{-inf}^x F, error)` when known analytically.
    fn lower_tail_integral(&self, _x: f64) -> Option<(f64, f64)> {
        None
    }
}

// Power-law extrapolation of a tail from two probes; (value, error).
fn extrapolated_tail(t_far: f64, t_near: f64, x: f64) -> (f64, f64) {
    if t_far <= 0.0 {
        return (0.0, 0.0);
    }
    if t_near <= t_far {
        return (f64::INFINITY, f64::INFINITY);
    }
    let p = (t_near / t_far).ln() / core::f64::consts::LN_2;
    if p <= 1.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let v = t_far * x / (p - 1.0);
    (v, 0.25 * v)
}

fn upper_tail(d: &dyn Cdf1d, x: f64) -> (f64, f64) {
    d.upper_tail_integral(x).unwrap_or_else(|| extrapolated_tail(1.0 - d.cdf(x), 1.0 - d.cdf(0.5 * x), x))
}

fn lower_tail(d: &dyn Cdf1d, x: f64) -> (f64, f64) {
    d.lower_tail_integral(-x).unwrap_or_else(|| extrapolated_tail(d.cdf(-x), d.cdf(-0.5 * x), x))
}

/// `int |F_a - F_b|` over `[-tail_cut, tail_cut]` by adaptive quadrature, plus
/// the two tails (analytic when the laws provide them, otherwise a power-law
/// extrapolation). Tail and quadrature errors are reported as `stderr`.
pub fn w1_cdf_integral(a: &dyn Cdf1d, b: &dyn Cdf1d, tail_cut: f64, tol: f64) -> Result<W1Result> {
    if !(tail_cut > 0.0) || !(tol > 0.0) {
        return usage("tail_cut and tol must be positive");
    }
    let grid = 400;
    for law in [a, b] {
        let mut last = f64::NEG_INFINITY;
        for k in 0..=grid {
            let x = -tail_cut + 2.0 * tail_cut * k as f64 / grid as f64;
            let f = law.cdf(x);
            if !(0.0 - 1e-12..=1.0 + 1e-12).contains(&f) || f < last - 1e-10 {
                return Err(Error::NonMonotoneCdf { x });
            }
            last = f;
        }
    }
    let nb = 64;
    let breaks: Vec<f64> = (0..=nb).map(|k| -tail_cut + 2.0 * tail_cut * k as f64 / nb as f64).collect();
    let cfg = Adaptive { abs_tol: 0.25 * tol, rel_tol: 1e-12, max_panels: 4000 };
    let (body, body_err) = adaptive(|x| (a.cdf(x) - b.cdf(x)).abs(), &breaks, cfg);
    let (ua, uae) = upper_tail(a, tail_cut);
    let (ub, ube) = upper_tail(b, tail_cut);
    let (la, lae) = lower_tail(a, tail_cut);
    let (lb, lbe) = lower_tail(b, tail_cut);
    let tails = (ua - ub).abs() + (la - lb).abs();
    let err = body_err + uae + ube + lae + lbe;
    if !tails.is_finite() {
        return usage("tail integral diverges; the laws have no first moment beyond the cut");
    }
    Ok(W1Result { value: body + tails, method: W1Method::CdfIntegral, stderr: Some(err) })
}

/// Average of 1-D W1 over random directions; a surrogate, not W1 itself.
pub fn sliced_w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, n_directions: usize, rng: &mut RngStream) -> Result<W1Result> {
    if a.dim != b.dim || a.dim < 2 {
        return usage("sliced_w1 needs matching dimension >= 2");
    }
    if n_directions == 0 {
        return usage("need at least one direction");
    }
    let mut dir = alloc::vec![0.0; a.dim];
    let mut vals = Vec::with_capacity(n_directions);
    for _ in 0..n_directions {
        rng.unit_vector(&mut dir);
        vals.push(w1_sorted_1d(&a.project(&dir), &b.project(&dir))?.value);
    }
    let value = crate::stats::mean(&vals);
    Ok(W1Result { value, method: W1Method::Sliced, stderr: Some(crate::stats::std_error(&vals)) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resampling {
    /// Resample the two measures independently.
    Independent,
    /// Same row indices for both (common-random-number pairs of equal size).
    Paired,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub se: f64,
    pub n_resamples: usize,
    /// Set when fewer than 100 resamples were requested.
    pub few_resamples: bool,
}

fn resample(m: &EmpiricalMeasure, idx: &[usize]) -> EmpiricalMeasure {
    let mut pts = Vec::with_capacity(idx.len() * m.dim);
    for &i in idx {
        pts.extend_from_slice(m.point(i));
    }
    EmpiricalMeasure { dim: m.dim, points: pts, weights: None }
}

/// Percentile bootstrap interval of `estimator(a, b)`.
pub fn bootstrap_ci<F>(
    estimator: F,
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    n_resamples: usize,
    level: f64,
    mode: Resampling,
    rng: &mut RngStream,
) -> Result<BootstrapCi>
where
    F: Fn(&EmpiricalMeasure, &EmpiricalMeasure) -> Result<f64>,
{
    if !a.is_uniform() || !b.is_uniform() {
        return usage("bootstrap needs uniform measures");
    }
    if mode == Resampling::Paired && a.len() != b.len() {
        return usage("paired bootstrap needs equal sizes");
    }
    if n_resamples < 2 {
        return usage("need at least two resamples");
    }
    let mut stats = Vec::with_capacity(n_resamples);
    let mut ia = alloc::vec![0usize; a.len()];
    let mut ib = alloc::vec![0usize; b.len()];
    for _ in 0..n_resamples {
        ia.iter_mut().for_each(|i| *i = rng.below(a.len()));
        match mode {
            Resampling::Paired => ib.copy_from_slice(&ia),
            Resampling::Independent => ib.iter_mut().for_each(|i| *i = rng.below(b.len())),
        }
        stats.push(estimator(&resample(a, &ia), &resample(b, &ib))?);
    }
    let se = crate::stats::variance(&stats).sqrt();
    sort_floats(&mut stats);
    let tail = 0.5 * (1.0 - level);
    Ok(BootstrapCi {
        low: quantile_sorted(&stats, tail),
        high: quantile_sorted(&stats, 1.0 - tail),
        se,
        n_resamples,
        few_resamples: n_resamples < 100,
    })
}
