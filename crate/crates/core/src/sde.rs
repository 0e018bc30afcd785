//! Euler–Maruyama ensembles for `dX = b(X) dt + sigma(X-) dL` with stable or
//! Brownian noise, and numerical checks of the structural assumptions on
//! `(b, sigma)`: ellipticity, derivative bounds and the dissipativity
//! conditions.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{domain, usage, Error, Result};
use crate::rng::{lane, RngStream};
use crate::stable::{StabilityIndex, StableIncrementSampler, StableIncrementSpec};
use crate::wasserstein::{w1_sorted_samples, EmpiricalMeasure};

/// Declared constants `(c0, c1, c2, c3)` of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamTuple {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl ParamTuple {
    pub fn new(c0: f64, c1: f64, c2: f64, c3: f64) -> Result<Self> {
        if !(c0 > 0.0) {
            return Err(domain("c0", c0));
        }
        if !(c1 >= 0.0) {
            return Err(domain("c1", c1));
        }
        if !(c2 >= 1.0) {
            return Err(domain("c2", c2));
        }
        if !(c3 > 0.0) {
            return Err(domain("c3", c3));
        }
        Ok(Self { c0, c1, c2, c3 })
    }
}

/// Coefficients of the SDE. Matrices are row-major `d x d`.
pub trait ModelSpec: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn id(&self) -> String;

    fn theta(&self) -> Option<ParamTuple> {
        None
    }

    fn drift_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut o = alloc::vec![0.0; self.dim()];
        self.drift(x, &mut o);
        o
    }

    fn diffusion_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut o = alloc::vec![0.0; d * d];
        self.diffusion(x, &mut o);
        o
    }
}

/// `b(x) = -rate x`, `sigma = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrnsteinUhlenbeck {
    pub dim: usize,
    pub rate: f64,
}

impl OrnsteinUhlenbeck {
    pub fn new(dim: usize) -> Self {
        Self { dim, rate: 1.0 }
    }
}

impl ModelSpec for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = -self.rate * v);
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        identity_into(self.dim, out);
    }

    fn id(&self) -> String {
        alloc::format!("ou(d={},rate={})", self.dim, self.rate)
    }

    fn theta(&self) -> Option<ParamTuple> {
        // (DC') with c0 = rate, c1 = 0; sigma = I gives c2 = 1; |grad b| = rate.
        ParamTuple::new(self.rate, 0.0, 1.0, self.rate.max(1e-300)).ok()
    }
}

/// `b(x) = -x`, `sigma(x) = diag(sqrt(1 + x_i^2 / (1 + x_i^2)) / c)`.
///
/// The diagonal entries lie in `[1/c, sqrt(2)/c)`, so (A1) holds with
/// `c2 = max(c^2, 2/c^2)`; the entries are smooth with derivatives of order
/// 1..3 bounded by `0.5/c`, `1/c`, `3/c` (crude but certified), and since
/// `sigma` is diagonal with Lipschitz entries (DC') holds with `c0 = 1, c1 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicativeOu {
    pub dim: usize,
    pub c: f64,
}

impl MultiplicativeOu {
    pub fn new(dim: usize, c: f64) -> Self {
        Self { dim, c }
    }

    fn entry(&self, v: f64) -> f64 {
        let s = v * v;
        (1.0 + s / (1.0 + s)).sqrt() / self.c
    }
}

impl ModelSpec for MultiplicativeOu {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = -v);
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = self.entry(x[i]);
        }
    }

    fn id(&self) -> String {
        alloc::format!("ou_multiplicative(d={},c={})", self.dim, self.c)
    }

    fn theta(&self) -> Option<ParamTuple> {
        let c2 = (self.c * self.c).max(2.0 / (self.c * self.c)).max(1.0);
        ParamTuple::new(1.0, 0.0, c2, (1.0 + 3.0 / self.c).max(1.0)).ok()
    }
}

/// Model from closures.
pub struct FnModel<B, S> {
    dim: usize,
    name: String,
    drift: B,
    diffusion: S,
    theta: Option<ParamTuple>,
}

impl<B, S> FnModel<B, S>
where
    B: Fn(&[f64], &mut [f64]) + Send + Sync,
    S: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, name: &str, drift: B, diffusion: S) -> Self {
        Self { dim, name: name.into(), drift, diffusion, theta: None }
    }

    pub fn with_theta(mut self, theta: ParamTuple) -> Self {
        self.theta = Some(theta);
        self
    }
}

impl<B, S> ModelSpec for FnModel<B, S>
where
    B: Fn(&[f64], &mut [f64]) + Send + Sync,
    S: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    fn id(&self) -> String {
        self.name.clone()
    }

    fn theta(&self) -> Option<ParamTuple> {
        self.theta
    }
}

pub fn identity_into(d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

/// Driving noise of the scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Subordinated stable increments. `alpha = 2` gives Brownian increments
    /// but still consumes the subordinator draws, keeping streams aligned
    /// across alpha for common random numbers.
    Stable(StabilityIndex),
    /// Plain `sqrt(dt) G` increments.
    Brownian,
    /// Zero increments (deterministic Euler scheme).
    Zero,
}

impl NoiseKind {
    pub fn stable(alpha: f64) -> Result<Self> {
        Ok(NoiseKind::Stable(StabilityIndex::new(alpha)?))
    }

    /// Index driving the small-time scale `t^{1/index}`.
    pub fn index(&self) -> f64 {
        match self {
            NoiseKind::Stable(a) => a.value(),
            _ => 2.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseKind::Stable(a) => alloc::format!("stable({})", a.value()),
            NoiseKind::Brownian => "brownian".into(),
            NoiseKind::Zero => "zero".into(),
        }
    }

    /// Fills `out` with one increment over `dt`.
    pub fn increment(&self, dim: usize, dt: f64, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        if out.len() != dim {
            return usage("output length must equal the dimension");
        }
        self.sampler(dim, dt)?.fill(rng, out);
        Ok(())
    }

    /// Sampler of increments over `dt` with its constants precomputed.
    pub fn sampler(&self, dim: usize, dt: f64) -> Result<IncrementSampler> {
        let spec = StableIncrementSpec::new(StabilityIndex::BROWNIAN, dim, dt)?;
        Ok(match *self {
            NoiseKind::Stable(alpha) => IncrementSampler::Stable(StableIncrementSampler::new(&StableIncrementSpec { alpha, ..spec })?),
            NoiseKind::Brownian => IncrementSampler::Brownian(dt.sqrt()),
            NoiseKind::Zero => IncrementSampler::Zero,
        })
    }
}

/// Per-step increment draws of a [`NoiseKind`] at fixed `(dim, dt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IncrementSampler {
    Stable(StableIncrementSampler),
    Brownian(f64),
    Zero,
}

impl IncrementSampler {
    #[inline]
    pub fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        match self {
            IncrementSampler::Stable(s) => s.sample_into(rng, out),
            IncrementSampler::Brownian(s) => out.iter_mut().for_each(|v| *v = s * rng.normal()),
            IncrementSampler::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub burn_in: f64,
    pub noise: NoiseKind,
    /// Paths with `|X|` above this are aborted.
    pub overflow_cap: f64,
    /// Largest tolerated fraction of aborted paths.
    pub max_overflow_fraction: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, n_paths: usize, noise: NoiseKind) -> Self {
        Self { dt, t_end, n_paths, burn_in: 0.0, noise, overflow_cap: 1e12, max_overflow_fraction: 1e-4 }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(domain("dt", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(domain("t_end", self.t_end));
        }
        if self.n_paths == 0 {
            return usage("n_paths must be positive");
        }
        if !(self.burn_in >= 0.0 && self.burn_in <= self.t_end) {
            return usage("burn_in must lie in [0, t_end]");
        }
        self.step_of(self.t_end)?;
        self.step_of(self.burn_in)?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Step index of a reporting time; it must be a multiple of `dt`.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * t.abs().max(self.dt) || k < 0.0 {
            return usage(alloc::format!("time {t} is not on the dt = {} grid", self.dt));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Point(Vec<f64>),
    /// Row `i mod n` of a row-major sample starts path `i`.
    Sample { dim: usize, points: Vec<f64> },
}

impl InitialCondition {
    pub fn origin(dim: usize) -> Self {
        InitialCondition::Point(alloc::vec![0.0; dim])
    }

    fn dim(&self) -> usize {
        match self {
            InitialCondition::Point(p) => p.len(),
            InitialCondition::Sample { dim, .. } => *dim,
        }
    }

    fn start(&self, path: usize) -> &[f64] {
        match self {
            InitialCondition::Point(p) => p,
            InitialCondition::Sample { dim, points } => {
                let n = points.len() / dim;
                let i = path % n;
                &points[i * dim..(i + 1) * dim]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverflowEvent {
    pub path: usize,
    pub time: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMeta {
    pub model: String,
    pub config: IntegratorConfig,
    pub seed: u64,
}

/// Terminal (or snapshot) states of an ensemble, row-major `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    pub points: Vec<f64>,
    pub time: f64,
    pub meta: EnsembleMeta,
    pub overflowed: Vec<OverflowEvent>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.points.chunks_exact(self.dim).map(|r| r[j]).collect()
    }

    pub fn to_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.dim, self.points.clone())
    }
}

/// Reusable buffers for [`em_step_into`].
#[derive(Clone, Debug)]
pub struct StepScratch {
    b: Vec<f64>,
    s: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        Self { b: alloc::vec![0.0; dim], s: alloc::vec![0.0; dim * dim] }
    }
}

/// `out = x + b(x) dt + sigma(x) increment`, with `sigma` at the pre-jump state.
pub fn em_step_into(
    x: &[f64],
    model: &dyn ModelSpec,
    dt: f64,
    increment: &[f64],
    out: &mut [f64],
    scratch: &mut StepScratch,
) -> Result<()> {
    let d = model.dim();
    model.drift(x, &mut scratch.b);
    model.diffusion(x, &mut scratch.s);
    let mut norm2 = 0.0;
    for i in 0..d {
        let row = &scratch.s[i * d..(i + 1) * d];
        let noise: f64 = row.iter().zip(increment).map(|(a, b)| a * b).sum();
        let v = x[i] + scratch.b[i] * dt + noise;
        out[i] = v;
        norm2 += v * v;
    }
    if !norm2.is_finite() {
        return Err(Error::Overflow { path: usize::MAX, time: f64::NAN, norm: norm2.sqrt() });
    }
    Ok(())
}

pub fn em_step(x: &[f64], model: &dyn ModelSpec, dt: f64, increment: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() || increment.len() != model.dim() {
        return usage("state and increment must match the model dimension");
    }
    let mut out = alloc::vec![0.0; x.len()];
    em_step_into(x, model, dt, increment, &mut out, &mut StepScratch::new(x.len()))?;
    Ok(out)
}

/// States of a block of paths at the recorded steps, laid out as
/// `[path][record][dim]`; overflowed paths keep zeros and are listed.
#[derive(Clone, Debug, Default)]
pub struct PathBlock {
    pub paths: Range<usize>,
    pub data: Vec<f64>,
    pub overflowed: Vec<OverflowEvent>,
}

/// Simulates paths `paths` (each on its own substream) and records the state at
/// the sorted step indices `record`. This is the unit of parallel work: any
/// partition of the path range gives identical results.
pub fn simulate_block(
    model: &dyn ModelSpec,
    cfg: &IntegratorConfig,
    init: &InitialCondition,
    seed: u64,
    record: &[usize],
    paths: Range<usize>,
) -> Result<PathBlock> {
    let d = model.dim();
    if init.dim() != d {
        return usage("initial condition dimension differs from the model");
    }
    let steps = record.last().copied().unwrap_or(0);
    let nrec = record.len();
    let mut data = alloc::vec![0.0; paths.len() * nrec * d];
    let mut overflowed = Vec::new();
    let mut scratch = StepScratch::new(d);
    let mut x = alloc::vec![0.0; d];
    let mut y = alloc::vec![0.0; d];
    let mut inc = alloc::vec![0.0; d];
    let cap2 = cfg.overflow_cap * cfg.overflow_cap;
    let sampler = cfg.noise.sampler(d, cfg.dt)?;
    for (local, p) in paths.clone().enumerate() {
        let mut rng = RngStream::for_path(seed, lane::PATH, p as u64);
        x.copy_from_slice(init.start(p));
        let base = local * nrec * d;
        let mut next = 0;
        while next < nrec && record[next] == 0 {
            data[base + next * d..base + (next + 1) * d].copy_from_slice(&x);
            next += 1;
        }
        for k in 1..=steps {
            sampler.fill(&mut rng, &mut inc);
            let res = em_step_into(&x, model, cfg.dt, &inc, &mut y, &mut scratch);
            let n2: f64 = y.iter().map(|v| v * v).sum();
            if res.is_err() || !(n2 <= cap2) {
                overflowed.push(OverflowEvent { path: p, time: k as f64 * cfg.dt, norm: n2.sqrt() });
                break;
            }
            core::mem::swap(&mut x, &mut y);
            while next < nrec && record[next] == k {
                data[base + next * d..base + (next + 1) * d].copy_from_slice(&x);
                next += 1;
            }
        }
    }
    Ok(PathBlock { paths, data, overflowed })
}

/// Stitches ordered blocks into one ensemble per recorded time, dropping
/// overflowed paths (or failing if there are too many).
pub fn assemble_snapshots(
    model: &dyn ModelSpec,
    cfg: &IntegratorConfig,
    seed: u64,
    times: &[f64],
    blocks: Vec<PathBlock>,
) -> Result<Vec<Ensemble>> {
    let d = model.dim();
    let nrec = times.len();
    let mut overflowed: Vec<OverflowEvent> = blocks.iter().flat_map(|b| b.overflowed.iter().copied()).collect();
    overflowed.sort_by_key(|e| e.path);
    let total = cfg.n_paths;
    if !overflowed.is_empty() && overflowed.len() as f64 > cfg.max_overflow_fraction * total as f64 {
        let first = overflowed[0];
        return Err(Error::OverflowFraction {
            count: overflowed.len(),
            total,
            first_path: first.path,
            first_time: first.time,
        });
    }
    let meta = EnsembleMeta { model: model.id(), config: cfg.clone(), seed };
    let mut out: Vec<Ensemble> = times
        .iter()
        .map(|&t| Ensemble {
            dim: d,
            points: Vec::with_capacity(total * d),
            time: t,
            meta: meta.clone(),
            overflowed: overflowed.clone(),
        })
        .collect();
    let mut ov = overflowed.iter().map(|e| e.path).peekable();
    for b in &blocks {
        for (local, p) in b.paths.clone().enumerate() {
            while ov.peek().is_some_and(|q| *q < p) {
                ov.next();
            }
            if ov.peek() == Some(&p) {
                continue;
            }
            for (r, e) in out.iter_mut().enumerate() {
                let s = (local * nrec + r) * d;
                e.points.extend_from_slice(&b.data[s..s + d]);
            }
        }
    }
    Ok(out)
}

/// Serial ensemble snapshots at the given reporting times.
pub fn simulate_snapshots(
    model: &dyn ModelSpec,
    cfg: &IntegratorConfig,
    init: &InitialCondition,
    seed: u64,
    times: &[f64],
) -> Result<Vec<Ensemble>> {
    cfg.validate()?;
    let record = record_steps(cfg, times)?;
    let block = simulate_block(model, cfg, init, seed, &record, 0..cfg.n_paths)?;
    assemble_snapshots(model, cfg, seed, times, alloc::vec![block])
}

/// Step indices for reporting times, which must be nondecreasing and on grid.
pub fn record_steps(cfg: &IntegratorConfig, times: &[f64]) -> Result<Vec<usize>> {
    let steps: Vec<usize> = times.iter().map(|&t| cfg.step_of(t)).collect::<Result<_>>()?;
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return usage("reporting times must be nondecreasing");
    }
    if steps.last().is_some_and(|&s| s > cfg.steps()) {
        return usage("reporting time beyond t_end");
    }
    Ok(steps)
}

/// Terminal ensemble at `t_end`.
pub fn simulate_ensemble(
    model: &dyn ModelSpec,
    cfg: &IntegratorConfig,
    init: &InitialCondition,
    seed: u64,
) -> Result<Ensemble> {
    Ok(simulate_snapshots(model, cfg, init, seed, &[cfg.t_end])?.remove(0))
}

/// Ergodicity diagnostic: W1 between disjoint halves of the paths, compared
/// with its permutation distribution under the null of equal laws.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfBatchDiagnostic {
    pub statistic: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// `null_mean + 3 null_sd`, for reporting.
    pub threshold: f64,
    /// `(1 + #{null >= statistic}) / (1 + permutations)`.
    pub p_value: f64,
}

/// Level of the permutation test behind [`HalfBatchDiagnostic::passes`].
pub const HALF_BATCH_LEVEL: f64 = 0.01;
/// Permutations used by [`invariant_from_snapshots`].
pub const HALF_BATCH_PERMUTATIONS: usize = 200;

impl HalfBatchDiagnostic {
    /// The permutation p-value, not the moment threshold, decides: with heavy
    /// tails the permutation law of W1 is itself heavy-tailed and
    /// `mean + 3 sd` fires far more often than its nominal rate.
    pub fn passes(&self) -> bool {
        self.p_value >= HALF_BATCH_LEVEL
    }
}

#[derive(Clone, Debug)]
pub struct InvariantEstimate {
    pub measure: EmpiricalMeasure,
    pub ensemble: Ensemble,
    /// Halves of the terminal ensemble against each other.
    pub half_batch: HalfBatchDiagnostic,
    /// First half at `t_end` against second half at `burn_in`: detects laws
    /// still moving after burn-in.
    pub stationarity: HalfBatchDiagnostic,
    pub converged: bool,
}

// Fixed projection directions so the diagnostic is deterministic in d > 1.
fn projections(points: &[f64], dim: usize, n_dirs: usize, seed: u64) -> Vec<Vec<f64>> {
    if dim == 1 {
        return alloc::vec![points.to_vec()];
    }
    let mut rng = RngStream::for_path(seed, lane::DIRECTIONS, 0);
    let mut dir = alloc::vec![0.0; dim];
    (0..n_dirs)
        .map(|_| {
            rng.unit_vector(&mut dir);
            points.chunks_exact(dim).map(|p| p.iter().zip(&dir).map(|(a, b)| a * b).sum()).collect()
        })
        .collect()
}

/// Sliced (or exact in d = 1) half-batch diagnostic between two samples.
pub fn half_batch_diagnostic(a: &[f64], b: &[f64], dim: usize, permutations: usize, seed: u64) -> HalfBatchDiagnostic {
    let pa = projections(a, dim, 16, seed);
    let pb = projections(b, dim, 16, seed);
    let stat = |xa: &[Vec<f64>], xb: &[Vec<f64>]| {
        xa.iter().zip(xb).map(|(p, q)| w1_sorted_samples(p, q)).sum::<f64>() / xa.len() as f64
    };
    let statistic = stat(&pa, &pb);
    let n = pa[0].len().min(pb[0].len());
    let mut rng = RngStream::for_path(seed, lane::BOOTSTRAP, 0);
    let mut perm: Vec<usize> = (0..2 * n).collect();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        for i in (1..perm.len()).rev() {
            let j = rng.below(i + 1);
            perm.swap(i, j);
        }
        let pick = |k: usize, proj: usize| if k < n { pa[proj][k] } else { pb[proj][k - n] };
        let xa: Vec<Vec<f64>> = (0..pa.len()).map(|q| perm[..n].iter().map(|&k| pick(k, q)).collect()).collect();
        let xb: Vec<Vec<f64>> = (0..pa.len()).map(|q| perm[n..].iter().map(|&k| pick(k, q)).collect()).collect();
        null.push(stat(&xa, &xb));
    }
    let null_mean = crate::stats::mean(&null);
    let null_sd = crate::stats::variance(&null).sqrt();
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    let p_value = (1 + exceed) as f64 / (1 + permutations) as f64;
    HalfBatchDiagnostic { statistic, null_mean, null_sd, threshold: null_mean + 3.0 * null_sd, p_value }
}

/// Runs to `t_end`, keeps the terminal ensemble as a sample of the invariant
/// law and records the ergodicity diagnostics.
pub fn estimate_invariant_measure(model: &dyn ModelSpec, cfg: &IntegratorConfig, seed: u64) -> Result<InvariantEstimate> {
    let ens = simulate_snapshots(model, cfg, &InitialCondition::origin(model.dim()), seed, &[cfg.burn_in, cfg.t_end])?;
    invariant_from_snapshots(ens[0].clone(), ens[1].clone(), seed)
}

/// Diagnostics from snapshots at `burn_in` and `t_end` of the same run.
pub fn invariant_from_snapshots(at_burn_in: Ensemble, terminal: Ensemble, seed: u64) -> Result<InvariantEstimate> {
    let d = terminal.dim;
    let n = terminal.len();
    if n < 4 {
        return usage("need at least four paths for the half-batch diagnostic");
    }
    let h = n / 2;
    let half_batch = half_batch_diagnostic(&terminal.points[..h * d], &terminal.points[h * d..2 * h * d], d, HALF_BATCH_PERMUTATIONS, seed);
    let stationarity =
        half_batch_diagnostic(&terminal.points[..h * d], &at_burn_in.points[h * d..2 * h * d], d, HALF_BATCH_PERMUTATIONS, seed ^ 0x5eed);
    let converged = stationarity.passes() && half_batch.passes();
    Ok(InvariantEstimate { measure: terminal.to_measure()?, ensemble: terminal, half_batch, stationarity, converged })
}

/// Box and count for random probe pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSpec {
    pub n: usize,
    pub half_width: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { n: 2000, half_width: 10.0, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DissipativityKind {
    /// `2<x-y, b(x)-b(y)> + |S(x)-S(y)|_HS^2 - |(x-y)^T (S(x)-S(y))|^2/|x-y|^2`,
    /// `S = (sigma sigma^T - sigma0^2 I)^{1/2}`.
    Dc,
    /// `<x-y, b(x)-b(y)>`.
    DcPrime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipativityViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipativityReport {
    pub kind: DissipativityKind,
    /// Smallest `-lhs/|x-y|^2` among the widest quarter of the probes.
    pub c0: f64,
    /// Smallest `c1 >= 0` with `lhs <= -c0|x-y|^2 + c1` on all probes.
    pub c1: f64,
    pub violations: Vec<DissipativityViolation>,
    pub n_probes: usize,
}

impl DissipativityReport {
    pub fn holds(&self) -> bool {
        self.c0 > 0.0 && self.violations.is_empty()
    }
}

/// Principal square root of `sigma sigma^T - sigma0^2 I`. Semidefinite is
/// accepted (`sigma0` equal to the smallest singular value gives a singular
/// `sigma_tilde`, e.g. pure reflection for `sigma = I, sigma0 = 1`).
pub fn sigma_tilde(sigma: &[f64], d: usize, sigma0: f64, at: &[f64]) -> Result<DMatrix<f64>> {
    let s = DMatrix::from_row_slice(d, d, sigma);
    let a = &s * s.transpose();
    let eig = SymmetricEigen::new(a);
    let threshold = sigma0 * sigma0 * (1.0 - 1e-12) - 1e-14;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < threshold {
        return Err(Error::NotPositiveDefinite { probe: at.to_vec(), min_eigenvalue: min, threshold });
    }
    let vals = eig.eigenvalues.map(|l| (l - sigma0 * sigma0).max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Left-hand side of (DC) or (DC') at one pair.
pub fn dissipativity_lhs(model: &dyn ModelSpec, kind: DissipativityKind, sigma0: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = model.dim();
    let (bx, by) = (model.drift_vec(x), model.drift_vec(y));
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let inner: f64 = diff.iter().zip(bx.iter().zip(&by)).map(|(u, (p, q))| u * (p - q)).sum();
    match kind {
        DissipativityKind::DcPrime => Ok(inner),
        DissipativityKind::Dc => {
            let sx = sigma_tilde(&model.diffusion_vec(x), d, sigma0, x)?;
            let sy = sigma_tilde(&model.diffusion_vec(y), d, sigma0, y)?;
            let dm = sx - sy;
            let hs = dm.iter().map(|v| v * v).sum::<f64>();
            let r2: f64 = diff.iter().map(|v| v * v).sum();
            let u = nalgebra::DVector::from_column_slice(&diff);
            let proj = dm.transpose() * &u;
            Ok(2.0 * inner + hs - proj.norm_squared() / r2)
        }
    }
}

pub fn check_dissipativity(
    model: &dyn ModelSpec,
    kind: DissipativityKind,
    sigma0: Option<f64>,
    probes: ProbeSpec,
) -> Result<DissipativityReport> {
    let d = model.dim();
    let s0 = sigma0.unwrap_or(0.0);
    if s0 < 0.0 {
        return Err(domain("sigma0", s0));
    }
    let mut rng = RngStream::for_path(probes.seed, lane::PROBES, 0);
    let mut samples: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = Vec::with_capacity(probes.n);
    for _ in 0..probes.n {
        let x: Vec<f64> = (0..d).map(|_| probes.half_width * (2.0 * rng.open01() - 1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| probes.half_width * (2.0 * rng.open01() - 1.0)).collect();
        let r2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 < 1e-24 {
            continue;
        }
        let lhs = dissipativity_lhs(model, kind, s0, &x, &y)?;
        samples.push((x, y, r2, lhs));
    }
    if samples.is_empty() {
        return usage("no usable probe pairs");
    }
    let mut by_r: Vec<usize> = (0..samples.len()).collect();
    by_r.sort_by(|&i, &j| samples[j].2.total_cmp(&samples[i].2));
    let top = by_r.len().div_ceil(4);
    let c0 = by_r[..top].iter().map(|&i| -samples[i].3 / samples[i].2).fold(f64::INFINITY, f64::min);
    let c1 = samples.iter().map(|s| s.3 + c0 * s.2).fold(0.0f64, f64::max);
    let mut violations = Vec::new();
    if let Some(theta) = model.theta() {
        let scale = if kind == DissipativityKind::Dc { 2.0 } else { 1.0 };
        for (x, y, r2, lhs) in &samples {
            let bound = -scale * theta.c0 * r2 + scale * theta.c1;
            if *lhs > bound + 1e-9 * (1.0 + bound.abs()) {
                violations.push(DissipativityViolation { x: x.clone(), y: y.clone(), lhs: *lhs, bound });
            }
        }
    }
    Ok(DissipativityReport { kind, c0, c1, violations, n_probes: samples.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    /// Extremes of `|sigma(x) y|^2` over unit `y` and the probes.
    pub ellipticity: (f64, f64),
    /// Observed bounds on `|prod grad_{y_i} b| + ||prod grad_{y_i} sigma||` for
    /// orders 1, 2, 3.
    pub derivative_bounds: [f64; 3],
    /// Smallest admissible `c2`.
    pub required_c2: f64,
    pub declared: Option<ParamTuple>,
}

impl AssumptionReport {
    pub fn c2_ok(&self) -> Option<bool> {
        self.declared.map(|t| t.c2 >= self.required_c2)
    }

    pub fn c3_ok(&self) -> Option<bool> {
        self.declared.map(|t| self.derivative_bounds.iter().all(|b| *b <= t.c3 * (1.0 + 1e-6)))
    }
}

fn op_norm(m: &[f64], d: usize) -> f64 {
    DMatrix::from_row_slice(d, d, m).singular_values().max()
}

// Mixed central difference of order |dirs| of a vector field along `dirs`.
fn mixed_difference(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], dirs: &[&[f64]], h: f64) -> Vec<f64> {
    let order = dirs.len();
    let mut acc: Option<Vec<f64>> = None;
    for mask in 0..(1u32 << order) {
        let mut p = x.to_vec();
        let mut sign = 1.0;
        for (k, dir) in dirs.iter().enumerate() {
            let s = if mask & (1 << k) != 0 { 1.0 } else { -1.0 };
            sign *= s;
            p.iter_mut().zip(dir.iter()).for_each(|(a, b)| *a += s * h * b);
        }
        let v = f(&p);
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|a| sign * a).collect()),
            Some(a) => a.iter_mut().zip(&v).for_each(|(s_, b)| *s_ += sign * b),
        }
    }
    let scale = (2.0 * h).powi(order as i32);
    acc.unwrap().into_iter().map(|v| v / scale).collect()
}

pub fn check_assumption_a(model: &dyn ModelSpec, probes: ProbeSpec) -> AssumptionReport {
    let d = model.dim();
    let mut rng = RngStream::for_path(probes.seed, lane::PROBES, 1);
    let (mut emin, mut emax) = (f64::INFINITY, 0.0f64);
    let mut bounds = [0.0f64; 3];
    let steps = [1e-5, 1e-3, 5e-3];
    let drift = |p: &[f64]| model.drift_vec(p);
    let diff = |p: &[f64]| model.diffusion_vec(p);
    let mut dirs = alloc::vec![alloc::vec![0.0; d]; 3];
    for _ in 0..probes.n {
        let x: Vec<f64> = (0..d).map(|_| probes.half_width * (2.0 * rng.open01() - 1.0)).collect();
        let s = DMatrix::from_row_slice(d, d, &model.diffusion_vec(&x));
        let eig = SymmetricEigen::new(s.transpose() * &s);
        for l in eig.eigenvalues.iter() {
            emin = emin.min(*l);
            emax = emax.max(*l);
        }
        for dir in dirs.iter_mut() {
            rng.unit_vector(dir);
        }
        for order in 1..=3 {
            let ds: Vec<&[f64]> = dirs[..order].iter().map(|v| v.as_slice()).collect();
            let db = mixed_difference(&drift, &x, &ds, steps[order - 1]);
            let dsig = mixed_difference(&diff, &x, &ds, steps[order - 1]);
            let nb = db.iter().map(|v| v * v).sum::<f64>().sqrt();
            bounds[order - 1] = bounds[order - 1].max(nb + op_norm(&dsig, d));
        }
    }
    let required_c2 = emax.max(1.0 / emin).max(1.0);
    AssumptionReport { ellipticity: (emin, emax), derivative_bounds: bounds, required_c2, declared: model.theta() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{linear_fit, mean, std_error, variance};
    use alloc::boxed::Box;
    use approx::assert_relative_eq;

    fn ou1() -> OrnsteinUhlenbeck {
        OrnsteinUhlenbeck::new(1)
    }

    #[test]
    fn euler_step_examples() {
        let free = FnModel::new(2, "free", |_x: &[f64], o: &mut [f64]| o.fill(0.0), |_x: &[f64], o: &mut [f64]| identity_into(2, o));
        assert_eq!(em_step(&[0.0, 0.0], &free, 0.3, &[1.5, -2.0]).unwrap(), alloc::vec![1.5, -2.0]);
        assert_eq!(em_step(&[2.0], &ou1(), 0.5, &[0.0]).unwrap(), alloc::vec![1.0]);
    }

    #[test]
    fn diffusion_uses_pre_jump_state() {
        let m = FnModel::new(1, "mult", |_x: &[f64], o: &mut [f64]| o[0] = 0.0, |x: &[f64], o: &mut [f64]| o[0] = 1.0 + x[0].abs());
        let x = 0.5;
        let jump = 3.0;
        let y = em_step(&[x], &m, 0.01, &[jump]).unwrap()[0];
        assert_eq!(y, x + (1.0 + x) * jump);
        assert_ne!(y, x + (1.0 + (x + jump).abs()) * jump);
    }

    #[test]
    fn overflow_is_reported() {
        let m = FnModel::new(1, "explode", |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0], |_x: &[f64], o: &mut [f64]| o[0] = 0.0);
        let cfg = IntegratorConfig::new(0.5, 20.0, 1, NoiseKind::Zero);
        let err = simulate_ensemble(&m, &cfg, &InitialCondition::Point(alloc::vec![2.0]), 0).unwrap_err();
        match err {
            Error::OverflowFraction { count, first_path, .. } => assert_eq!((count, first_path), (1, 0)),
            e => panic!("unexpected {e:?}"),
        }
        let nan = FnModel::new(1, "nan", |_x: &[f64], o: &mut [f64]| o[0] = f64::NAN, |_x: &[f64], o: &mut [f64]| o[0] = 1.0);
        assert!(matches!(em_step(&[0.0], &nan, 0.1, &[0.0]), Err(Error::Overflow { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = IntegratorConfig::new(0.3, 1.0, 4, NoiseKind::Brownian);
        assert!(c.validate().is_err());
        c.dt = 0.25;
        assert!(c.validate().is_ok());
        c.burn_in = 2.0;
        assert!(c.validate().is_err());
        assert!(ParamTuple::new(1.0, 0.0, 0.5, 1.0).is_err());
        assert!(ParamTuple::new(1.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn deterministic_limit() {
        let cfg = IntegratorConfig::new(1e-4, 1.0, 1, NoiseKind::Zero);
        let e = simulate_ensemble(&ou1(), &cfg, &InitialCondition::Point(alloc::vec![1.0]), 0).unwrap();
        assert!((e.points[0] - (-1f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn brownian_ou_stationary_variance() {
        let cfg = IntegratorConfig::new(0.01, 20.0, 4000, NoiseKind::Brownian).with_burn_in(10.0);
        let e = simulate_ensemble(&ou1(), &cfg, &InitialCondition::origin(1), 1).unwrap();
        let sq: Vec<f64> = e.points.iter().map(|v| v * v).collect();
        // Euler variance for OU is dt/(1-(1-dt)^2) = 1/(2-dt)
        let want = 1.0 / (2.0 - cfg.dt);
        assert!((mean(&sq) - want).abs() < 3.0 * std_error(&sq), "{} {}", mean(&sq), want);
    }

    #[test]
    fn euler_first_order_in_dt() {
        // Exact moments of the Euler chain vs the SDE; deterministic, no sampling.
        let (x0, t) = (1.0, 1.0);
        let mut dts = Vec::new();
        let mut errs_m = Vec::new();
        let mut errs_v = Vec::new();
        for &dt in &[0.1, 0.05, 0.025, 0.0125] {
            let n = (t / dt) as i32;
            let a = 1.0 - dt;
            let m = x0 * a.powi(n);
            let v = dt * (1.0 - a.powi(2 * n)) / (1.0 - a * a);
            dts.push(f64::ln(dt));
            errs_m.push(f64::ln((m - x0 * (-t).exp()).abs()));
            errs_v.push(f64::ln((v - (1.0 - (-2.0 * t).exp()) / 2.0).abs()));
        }
        for errs in [errs_m, errs_v] {
            let f = linear_fit(&dts, &errs).unwrap();
            assert!(f.slope > 0.7 && f.slope < 1.3, "{}", f.slope);
        }
    }

    #[test]
    fn euler_moments_match_simulation() {
        let cfg = IntegratorConfig::new(0.05, 1.0, 20_000, NoiseKind::Brownian);
        let e = simulate_ensemble(&ou1(), &cfg, &InitialCondition::Point(alloc::vec![1.0]), 2).unwrap();
        let a: f64 = 0.95;
        let want_m = a.powi(20);
        let want_v = 0.05 * (1.0 - a.powi(40)) / (1.0 - a * a);
        assert!((mean(&e.points) - want_m).abs() < 4.0 * std_error(&e.points));
        assert!((variance(&e.points) - want_v).abs() < 0.05 * want_v);
    }

    #[test]
    fn stable_ou_cf_at_t5() {
        let cfg = IntegratorConfig::new(0.01, 5.0, 20_000, NoiseKind::stable(1.5).unwrap());
        let e = simulate_ensemble(&ou1(), &cfg, &InitialCondition::origin(1), 3).unwrap();
        for &z in &[0.5, 1.0, 2.0] {
            let c = crate::stable::empirical_char_function(&e.points, 1, &[z]).unwrap();
            let want = (-z.powf(1.5) * (1.0 - (-7.5f64).exp()) / 3.0).exp();
            // O(dt) bias of the Euler scheme for this model is below 0.01 * want
            assert!((c.re - want).abs() < 3.0 * c.re_se + 0.01 * want, "z={z} {} {}", c.re, want);
        }
    }

    #[test]
    fn parallel_partition_is_bit_identical() {
        let model = MultiplicativeOu::new(2, 1.0);
        let cfg = IntegratorConfig::new(0.01, 0.5, 37, NoiseKind::stable(1.7).unwrap());
        let init = InitialCondition::origin(2);
        let times = [0.25, 0.5];
        let rec = record_steps(&cfg, &times).unwrap();
        let serial = simulate_snapshots(&model, &cfg, &init, 9, &times).unwrap();
        let blocks: Vec<PathBlock> =
            [0..10, 10..11, 11..37].into_iter().map(|r| simulate_block(&model, &cfg, &init, 9, &rec, r).unwrap()).collect();
        let par = assemble_snapshots(&model, &cfg, 9, &times, blocks).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn path_reordering_preserves_statistics() {
        // Paths are keyed by index: the ensemble of paths 0..n equals the
        // union of reversed blocks, row for row after reordering.
        let model = ou1();
        let cfg = IntegratorConfig::new(0.1, 1.0, 20, NoiseKind::Brownian);
        let init = InitialCondition::origin(1);
        let rec = record_steps(&cfg, &[1.0]).unwrap();
        let whole = simulate_block(&model, &cfg, &init, 4, &rec, 0..20).unwrap().data;
        let mut rev = Vec::new();
        for p in (0..20).rev() {
            rev.extend(simulate_block(&model, &cfg, &init, 4, &rec, p..p + 1).unwrap().data);
        }
        rev.reverse();
        assert_eq!(whole, rev);
    }

    #[test]
    fn invariant_measure_diagnostics() {
        let cfg = IntegratorConfig::new(0.01, 20.0, 4000, NoiseKind::Brownian).with_burn_in(10.0);
        let est = estimate_invariant_measure(&ou1(), &cfg, 5).unwrap();
        assert!(est.converged, "{:?} {:?}", est.half_batch, est.stationarity);
        let free = FnModel::new(1, "bm", |_x: &[f64], o: &mut [f64]| o[0] = 0.0, |_x: &[f64], o: &mut [f64]| o[0] = 1.0);
        let est = estimate_invariant_measure(&free, &cfg, 5).unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn half_batch_false_alarms_are_rare_under_heavy_tails() {
        let a = StabilityIndex::new(1.7).unwrap();
        let mut alarms = 0;
        for seed in 0..30u64 {
            let mut rng = RngStream::new(seed, 3);
            let mut x = alloc::vec![0.0; 2000];
            crate::oracle::sample_ou_stationary(a, &mut x, &mut rng).unwrap();
            let d = half_batch_diagnostic(&x[..1000], &x[1000..], 1, 100, seed);
            assert!(d.p_value > 0.0 && d.p_value <= 1.0);
            alarms += usize::from(!d.passes());
            let shifted: Vec<f64> = x[1000..].iter().map(|v| v + 0.5).collect();
            assert!(!half_batch_diagnostic(&x[..1000], &shifted, 1, 100, seed).passes());
        }
        assert!(alarms <= 3, "{alarms}");
    }

    #[test]
    fn dissipativity_ou_exact() {
        let r = check_dissipativity(&ou1(), DissipativityKind::DcPrime, None, ProbeSpec::default()).unwrap();
        assert_relative_eq!(r.c0, 1.0, max_relative = 1e-12);
        assert!(r.c1 < 1e-9);
        assert!(r.violations.is_empty());
    }

    fn sin_model(d: usize) -> impl ModelSpec {
        FnModel::new(
            d,
            "sin",
            |x: &[f64], o: &mut [f64]| o.iter_mut().zip(x).for_each(|(a, v)| *a = -v + v.sin()),
            move |_x: &[f64], o: &mut [f64]| identity_into(d, o),
        )
    }

    #[test]
    fn dissipativity_sine_drift_against_grid() {
        let m = sin_model(1);
        let r = check_dissipativity(&m, DissipativityKind::DcPrime, None, ProbeSpec { n: 4000, half_width: 10.0, seed: 3 }).unwrap();
        assert!(r.c0 > 0.0 && r.c1.is_finite());
        // brute-force grid over [-10, 10]^2 at the same c0
        let n = 801;
        let mut best = 0.0f64;
        for i in 0..n {
            let x = -10.0 + 20.0 * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let y = -10.0 + 20.0 * j as f64 / (n - 1) as f64;
                let l = (x - y) * (-(x - y) + x.sin() - y.sin());
                best = best.max(l + r.c0 * (x - y) * (x - y));
            }
        }
        assert!(r.c1 <= best + 1e-9, "{} {}", r.c1, best);
        assert!(r.c1 >= 0.9 * best, "{} {}", r.c1, best);
    }

    #[test]
    fn dc_with_constant_sigma_doubles_dc_prime() {
        let d = 2;
        let m = FnModel::new(
            d,
            "const",
            |x: &[f64], o: &mut [f64]| o.iter_mut().zip(x).for_each(|(a, v)| *a = -v + 0.5 * v.sin()),
            |_x: &[f64], o: &mut [f64]| o.copy_from_slice(&[2.0, 0.5, 0.0, 1.5]),
        );
        let p = ProbeSpec { n: 500, half_width: 5.0, seed: 1 };
        let a = check_dissipativity(&m, DissipativityKind::DcPrime, None, p).unwrap();
        let b = check_dissipativity(&m, DissipativityKind::Dc, Some(0.5), p).unwrap();
        assert_relative_eq!(b.c0, 2.0 * a.c0, max_relative = 1e-9);
        assert_relative_eq!(b.c1, 2.0 * a.c1, max_relative = 1e-6, epsilon = 1e-9);
        // sigma0 above the smallest singular value: PD failure with the probe
        let err = check_dissipativity(&m, DissipativityKind::Dc, Some(1.5), p).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn noise_split_identity() {
        let m = MultiplicativeOu::new(3, 1.0);
        let x = [0.3, -2.0, 5.0];
        let s = DMatrix::from_row_slice(3, 3, &m.diffusion_vec(&x));
        let st = sigma_tilde(&m.diffusion_vec(&x), 3, 0.7, &x).unwrap();
        let lhs = DMatrix::<f64>::identity(3, 3) * 0.49 + &st * st.transpose();
        assert!((lhs - &s * s.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn assumption_a_examples() {
        let p = ProbeSpec { n: 300, half_width: 10.0, seed: 2 };
        let r = check_assumption_a(&ou1(), p);
        assert_eq!(r.ellipticity, (1.0, 1.0));
        assert!((r.derivative_bounds[0] - 1.0).abs() < 1e-6);
        assert!(r.derivative_bounds[1] < 1e-6 && r.derivative_bounds[2] < 1e-4);
        assert_eq!(r.c2_ok(), Some(true));

        let m: Box<dyn ModelSpec> = Box::new(FnModel::new(
            1,
            "wavy",
            |x: &[f64], o: &mut [f64]| o[0] = -x[0],
            |x: &[f64], o: &mut [f64]| o[0] = 2.0 + x[0].sin(),
        ));
        let r = check_assumption_a(m.as_ref(), ProbeSpec { n: 5000, half_width: 10.0, seed: 2 });
        assert!(r.ellipticity.0 >= 1.0 - 1e-12 && r.ellipticity.0 < 1.01, "{:?}", r.ellipticity);
        assert!(r.ellipticity.1 <= 9.0 && r.ellipticity.1 > 8.99);
        assert!(r.required_c2 <= 9.0 + 1e-12 && r.required_c2 > 8.99);
    }

    #[test]
    fn multiplicative_model_declared_constants_hold() {
        let m = MultiplicativeOu::new(2, 1.0);
        let a = check_assumption_a(&m, ProbeSpec { n: 500, half_width: 6.0, seed: 4 });
        assert_eq!(a.c2_ok(), Some(true));
        assert_eq!(a.c3_ok(), Some(true), "{:?}", a.derivative_bounds);
        let dc = check_dissipativity(&m, DissipativityKind::DcPrime, None, ProbeSpec::default()).unwrap();
        assert!(dc.holds());
    }
}
