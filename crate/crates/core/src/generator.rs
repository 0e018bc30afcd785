//! The nonlocal generator `L^alpha_sigma f(x) = c_{d,alpha} int (f(x+Az) - f(x) -
//! <grad f(x), Az>) |z|^{-d-alpha} dz` with `A = sigma(x)`, the full generators of
//! the stable and Brownian equations, generator-gap decompositions, and
//! Monte Carlo probes of the Kolmogorov equation and semigroup smoothing.
//!
//! Quadrature works in polar coordinates over antipodal direction pairs, so the
//! compensator cancels exactly and only the symmetric second difference
//! `f(x+ru) + f(x-ru) - 2f(x)` is integrated against `r^{-1-alpha}`:
//! an analytic second-order Taylor term on `[0, eps]`, Gauss–Legendre panels
//! on `[eps, R]`, and `r = R e^s` panels on the tail.

use alloc::vec::Vec;

use nalgebra::DMatrix;

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{domain, usage, Error, Result};
use crate::quad::{GaussLegendre, SphereRule};
use crate::rng::{lane, RngStream};
use crate::sde::{record_steps, simulate_snapshots, InitialCondition, IntegratorConfig, ModelSpec, NoiseKind};
use crate::special::{ln_gamma, sphere_area};
use crate::stats::{linear_fit, mean, std_error, LinearFit};

/// `c_{d,alpha} = alpha 2^{alpha-2} Gamma((d+alpha)/2) / (pi^{d/2} Gamma((2-alpha)/2))`.
pub fn levy_constant(d: usize, alpha: f64) -> Result<f64> {
    if d == 0 {
        return usage("dimension must be positive");
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(domain("alpha", alpha));
    }
    Ok(ln_levy_constant(d, alpha).exp())
}

fn ln_levy_constant(d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    alpha.ln() + (alpha - 2.0) * core::f64::consts::LN_2 + ln_gamma(0.5 * (df + alpha))
        - 0.5 * df * core::f64::consts::PI.ln()
        - ln_gamma(0.5 * (2.0 - alpha))
}

/// `c_{d,alpha} S_d / (d (2 - alpha))`, which tends to 1 as `alpha -> 2`.
pub fn normalization_ratio(d: usize, alpha: f64) -> Result<f64> {
    levy_constant(d, alpha)?;
    let df = d as f64;
    let ln_sd = core::f64::consts::LN_2 + 0.5 * df * core::f64::consts::PI.ln() - ln_gamma(0.5 * df);
    Ok((ln_levy_constant(d, alpha) + ln_sd - df.ln() - (2.0 - alpha).ln()).exp())
}

/// `G(x) = x 4^x Gamma(d/2 + x) Gamma(x) sin(pi x)`, so that
/// `c_{d,2x} S_d = G(x) / (pi Gamma(d/2))`.
pub fn g_function(d: usize, x: f64) -> f64 {
    let df = d as f64;
    let ln = x.ln() + x * 4f64.ln() + ln_gamma(0.5 * df + x) + ln_gamma(x);
    ln.exp() * (core::f64::consts::PI * x).sin()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GProbeReport {
    pub d: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest `|G(x_{i+1}) - G(x_i)| / (x_{i+1} - x_i)`.
    pub max_slope: f64,
    /// `max_slope / Gamma(d/2 + 1)`.
    pub normalized_slope: f64,
    /// Largest relative deviation from `c_{d,2x} S_d = G(x)/(pi Gamma(d/2))`.
    pub identity_max_rel_err: f64,
}

pub fn g_function_lipschitz_probe(d: usize, grid: &[f64]) -> Result<GProbeReport> {
    if grid.iter().any(|&x| !(x > 0.5 && x < 1.0)) {
        return usage("grid must lie inside (1/2, 1)");
    }
    let mut grid = grid.to_vec();
    crate::stats::sort_floats(&mut grid);
    let values: Vec<f64> = grid.iter().map(|&x| g_function(d, x)).collect();
    let mut max_slope = 0.0f64;
    for i in 1..grid.len() {
        let dx = grid[i] - grid[i - 1];
        if dx > 0.0 {
            max_slope = max_slope.max((values[i] - values[i - 1]).abs() / dx);
        }
    }
    let half_d = 0.5 * d as f64;
    let mut identity_max_rel_err = 0.0f64;
    for (&x, &g) in grid.iter().zip(&values) {
        let lhs = levy_constant(d, 2.0 * x)? * sphere_area(d);
        let rhs = g / (core::f64::consts::PI * ln_gamma(half_d).exp());
        identity_max_rel_err = identity_max_rel_err.max((lhs - rhs).abs() / rhs.abs());
    }
    let normalized_slope = max_slope / ln_gamma(half_d + 1.0).exp();
    Ok(GProbeReport { d, grid, values, max_slope, normalized_slope, identity_max_rel_err })
}

/// A test function with optional analytic derivatives. The defaults fall
/// back to central differences.
pub trait TestFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient; returns `false` if unavailable.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        fd_gradient(&|p: &[f64]| self.value(p), x, out);
        true
    }

    /// Writes the row-major Hessian; returns `false` if unavailable.
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        fd_hessian(&|p: &[f64]| self.value(p), x, out);
        true
    }

    /// Lipschitz constant, if known.
    fn lip_const(&self) -> Option<f64> {
        None
    }

    /// Whether `gradient`/`hessian` are closed forms (checked against
    /// central differences by [`check_derivatives`]).
    fn analytic_derivatives(&self) -> bool {
        false
    }
}

fn fd_step(v: f64, base: f64) -> f64 {
    base * (1.0 + v.abs())
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i], 1e-6);
        p[i] = x[i] + h;
        let a = f(&p);
        p[i] = x[i] - h;
        let b = f(&p);
        p[i] = x[i];
        out[i] = (a - b) / (2.0 * h);
    }
}

pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..d {
        let hi = fd_step(x[i], 1e-4);
        p[i] = x[i] + hi;
        let a = f(&p);
        p[i] = x[i] - hi;
        let b = f(&p);
        p[i] = x[i];
        out[i * d + i] = (a - 2.0 * f0 + b) / (hi * hi);
        for j in 0..i {
            let hj = fd_step(x[j], 1e-4);
            let mut s = 0.0;
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                s += si * sj * f(&p);
            }
            p[i] = x[i];
            p[j] = x[j];
            let v = s / (4.0 * hi * hj);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
}

/// `cos(<xi, x> + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWave {
    pub xi: Vec<f64>,
    pub phase: f64,
}

impl PlaneWave {
    pub fn new(xi: Vec<f64>) -> Self {
        Self { xi, phase: 0.0 }
    }

    fn arg(&self, x: &[f64]) -> f64 {
        self.xi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phase
    }

    pub fn frequency(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TestFunction for PlaneWave {
    fn dim(&self) -> usize {
        self.xi.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.arg(x).cos()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let s = -self.arg(x).sin();
        out.iter_mut().zip(&self.xi).for_each(|(o, k)| *o = s * k);
        true
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let c = -self.arg(x).cos();
        let d = self.xi.len();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = c * self.xi[i] * self.xi[j];
            }
        }
        true
    }

    fn lip_const(&self) -> Option<f64> {
        Some(self.frequency())
    }

    fn analytic_derivatives(&self) -> bool {
        true
    }
}

/// `<a, x> + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub a: Vec<f64>,
    pub c: f64,
}

impl TestFunction for Affine {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + self.c
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.a);
        true
    }

    fn hessian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        true
    }

    fn lip_const(&self) -> Option<f64> {
        Some(self.a.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    fn analytic_derivatives(&self) -> bool {
        true
    }
}

/// `|x|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquaredNorm {
    pub dim: usize,
}

impl TestFunction for SquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v);
        true
    }

    fn hessian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        crate::sde::identity_into(self.dim, out);
        out.iter_mut().for_each(|v| *v *= 2.0);
        true
    }

    fn analytic_derivatives(&self) -> bool {
        true
    }
}

/// `|x|`, the canonical Lip(1) function; its Hessian is unavailable at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norm {
    pub dim: usize,
}

impl TestFunction for Norm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let n = self.value(x);
        if n == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
        } else {
            out.iter_mut().zip(x).for_each(|(o, v)| *o = v / n);
        }
        true
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let n = self.value(x);
        if n == 0.0 {
            return false;
        }
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = (id - x[i] * x[j] / (n * n)) / n;
            }
        }
        true
    }

    fn lip_const(&self) -> Option<f64> {
        Some(1.0)
    }

    fn analytic_derivatives(&self) -> bool {
        true
    }
}

type DerivFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Test function from closures. Missing derivatives fall back to central
/// differences unless `fd_fallback` is off, in which case they are reported
/// as unavailable.
pub struct FnTest<F> {
    dim: usize,
    value: F,
    gradient: Option<alloc::boxed::Box<DerivFn>>,
    hessian: Option<alloc::boxed::Box<DerivFn>>,
    lip: Option<f64>,
    pub fd_fallback: bool,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnTest<F> {
    pub fn new(dim: usize, value: F) -> Self {
        Self { dim, value, gradient: None, hessian: None, lip: None, fd_fallback: true }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.gradient = Some(alloc::boxed::Box::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.hessian = Some(alloc::boxed::Box::new(h));
        self
    }

    pub fn with_lip(mut self, l: f64) -> Self {
        self.lip = Some(l);
        self
    }

    pub fn without_fallback(mut self) -> Self {
        self.fd_fallback = false;
        self
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> TestFunction for FnTest<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.gradient {
            Some(g) => g(x, out),
            None if self.fd_fallback => fd_gradient(&|p: &[f64]| (self.value)(p), x, out),
            None => return false,
        }
        true
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.hessian {
            Some(h) => h(x, out),
            None if self.fd_fallback => fd_hessian(&|p: &[f64]| (self.value)(p), x, out),
            None => return false,
        }
        true
    }

    fn lip_const(&self) -> Option<f64> {
        self.lip
    }

    fn analytic_derivatives(&self) -> bool {
        self.gradient.is_some() || self.hessian.is_some()
    }
}

/// Largest relative deviation `|analytic - fd| / (1 + |analytic|)` of the
/// supplied derivatives from central differences over random probes.
pub fn check_derivatives(f: &dyn TestFunction, n: usize, half_width: f64, seed: u64) -> f64 {
    let d = f.dim();
    let mut rng = RngStream::for_path(seed, lane::PROBES, 2);
    let (mut g, mut gf) = (alloc::vec![0.0; d], alloc::vec![0.0; d]);
    let (mut h, mut hf) = (alloc::vec![0.0; d * d], alloc::vec![0.0; d * d]);
    let val = |p: &[f64]| f.value(p);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| half_width * (2.0 * rng.open01() - 1.0)).collect();
        if f.gradient(&x, &mut g) {
            fd_gradient(&val, &x, &mut gf);
            for (a, b) in g.iter().zip(&gf) {
                worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            }
        }
        if f.hessian(&x, &mut h) {
            fd_hessian(&val, &x, &mut hf);
            for (a, b) in h.iter().zip(&hf) {
                worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            }
        }
    }
    worst
}

/// Discretization of the jump integral.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Radius below which the second-order Taylor term is integrated exactly.
    pub inner_cut: f64,
    /// Radius where the uniform panels end and the `r = R e^s` tail begins.
    pub outer_cut: f64,
    /// Gauss–Legendre nodes per radial panel (the error estimate uses half).
    pub radial_nodes: usize,
    /// Sphere resolution: angle pairs in d = 2, the Gauss–Legendre order in
    /// `cos(theta)` in d = 3, antithetic Monte Carlo pairs for d > 3.
    pub sphere_nodes: usize,
    /// Width of the uniform radial panels on `[1, R]`.
    pub panel_width: f64,
    /// Seed of the Monte Carlo sphere rule (d > 3).
    pub seed: u64,
}

impl QuadratureConfig {
    pub fn for_dim(d: usize) -> Self {
        let sphere_nodes = match d {
            1 => 8,
            2 => 256,
            3 => 48,
            _ => 4096,
        };
        Self { inner_cut: 1e-2, outer_cut: 400.0, radial_nodes: 16, sphere_nodes, panel_width: 1.0, seed: 0 }
    }

    /// Cheaper rule for use inside Monte Carlo loops.
    pub fn coarse(d: usize) -> Self {
        let mut c = Self::for_dim(d);
        c.outer_cut = 60.0;
        c.sphere_nodes = match d {
            1 => 8,
            2 => 64,
            3 => 16,
            _ => 512,
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_cut > 0.0 && self.inner_cut < 1.0) {
            return Err(domain("inner_cut", self.inner_cut));
        }
        if !(self.outer_cut > 1.0 && self.outer_cut.is_finite()) {
            return Err(domain("outer_cut", self.outer_cut));
        }
        if self.radial_nodes < 8 || self.sphere_nodes < 8 {
            return usage("radial_nodes and sphere_nodes must be at least 8");
        }
        if !(self.panel_width > 0.0) {
            return Err(domain("panel_width", self.panel_width));
        }
        Ok(())
    }

    fn sphere(&self, d: usize, coarse: bool) -> SphereRule {
        let n = if coarse { self.sphere_nodes / 2 } else { self.sphere_nodes };
        if d <= 3 {
            SphereRule::deterministic(d, n)
        } else {
            let mut rng = RngStream::for_path(self.seed, lane::DIRECTIONS, 1);
            SphereRule::monte_carlo(d, n, &mut rng)
        }
    }
}

/// A generator value with its quadrature error estimate and, for
/// decompositions, the named pieces that sum to it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorEvaluation {
    pub value: f64,
    pub quad_error_estimate: f64,
    pub pieces: Vec<(&'static str, f64)>,
}

impl GeneratorEvaluation {
    fn from_pieces(pieces: Vec<(&'static str, f64)>, err: f64) -> Self {
        let value = pieces.iter().map(|p| p.1).sum();
        Self { value, quad_error_estimate: err, pieces }
    }

    pub fn piece(&self, name: &str) -> Option<f64> {
        self.pieces.iter().find(|p| p.0 == name).map(|p| p.1)
    }
}

// Radial integrals for several exponents, summed over direction pairs and
// not yet multiplied by the Levy constant.
#[derive(Clone, Debug, Default)]
struct RawJump {
    // int_0^eps of the Taylor term
    inner: Vec<f64>,
    // int_eps^1 of the second difference
    band: Vec<f64>,
    // int_eps^1 of the Taylor term
    band_taylor: Vec<f64>,
    // int_1^inf of the second difference
    outer: Vec<f64>,
    err: Vec<f64>,
    // <H, A A^T>
    hess_pairing: f64,
}

impl RawJump {
    fn total(&self, k: usize) -> f64 {
        self.inner[k] + self.band[k] + self.outer[k]
    }
}

struct Direction<'a> {
    f: &'a dyn TestFunction,
    x: &'a [f64],
    fx: f64,
    u: Vec<f64>,
    p: Vec<f64>,
}

impl Direction<'_> {
    fn second_difference(&mut self, r: f64) -> f64 {
        for ((p, x), u) in self.p.iter_mut().zip(self.x).zip(&self.u) {
            *p = x + r * u;
        }
        let a = self.f.value(&self.p);
        for ((p, x), u) in self.p.iter_mut().zip(self.x).zip(&self.u) {
            *p = x - r * u;
        }
        let b = self.f.value(&self.p);
        a + b - 2.0 * self.fx
    }
}

struct Rules {
    fine: GaussLegendre,
    coarse: GaussLegendre,
}

// (fine, coarse) integrals of D2(r) r^{-1-beta} over [a, b] for each beta.
fn panel(dir: &mut Direction, rules: &Rules, a: f64, b: f64, betas: &[f64], fine: &mut [f64], coarse: &mut [f64]) {
    for (r, w) in rules.fine.mapped(a, b) {
        let v = w * dir.second_difference(r);
        let lr = r.ln();
        for (k, beta) in betas.iter().enumerate() {
            fine[k] += v * (-(1.0 + beta) * lr).exp();
        }
    }
    for (r, w) in rules.coarse.mapped(a, b) {
        let v = w * dir.second_difference(r);
        let lr = r.ln();
        for (k, beta) in betas.iter().enumerate() {
            coarse[k] += v * (-(1.0 + beta) * lr).exp();
        }
    }
}

// Same on [s0, s1] of the tail after r = R e^s: D2(R e^s) (R e^s)^{-beta} ds.
fn tail_panel(dir: &mut Direction, rules: &Rules, rad: f64, s0: f64, s1: f64, betas: &[f64], fine: &mut [f64], coarse: &mut [f64]) {
    for (s, w) in rules.fine.mapped(s0, s1) {
        let r = rad * s.exp();
        let v = w * dir.second_difference(r);
        for (k, beta) in betas.iter().enumerate() {
            fine[k] += v * (-beta * r.ln()).exp();
        }
    }
    for (s, w) in rules.coarse.mapped(s0, s1) {
        let r = rad * s.exp();
        let v = w * dir.second_difference(r);
        for (k, beta) in betas.iter().enumerate() {
            coarse[k] += v * (-beta * r.ln()).exp();
        }
    }
}

fn growth_exponent(dir: &mut Direction, rad: f64) -> f64 {
    let band = |dir: &mut Direction, lo: f64| {
        (0..=8).map(|j| dir.second_difference(lo * 4f64.powf(j as f64 / 8.0)).abs()).fold(0.0f64, f64::max)
    };
    let m1 = band(dir, rad);
    let m2 = band(dir, 4.0 * rad);
    let floor = 1e-12 * (1.0 + dir.fx.abs());
    if m2 <= floor {
        return f64::NEG_INFINITY;
    }
    if m1 <= floor {
        return f64::INFINITY;
    }
    (m2 / m1).ln() / 4f64.ln()
}

fn hess_pairing(f: &dyn TestFunction, x: &[f64], a: &DMatrix<f64>) -> Result<f64> {
    let d = x.len();
    let mut h = alloc::vec![0.0; d * d];
    if !f.hessian(x, &mut h) {
        return usage("the test function has no Hessian at this point, which the inner Taylor region needs");
    }
    let h = DMatrix::from_row_slice(d, d, &h);
    let aat = a * a.transpose();
    Ok(h.component_mul(&aat).sum())
}

// Jump integral for each exponent in `betas`, sharing function evaluations.
fn raw_jump(f: &dyn TestFunction, x: &[f64], a: &DMatrix<f64>, betas: &[f64], q: &QuadratureConfig) -> Result<RawJump> {
    q.validate()?;
    let d = x.len();
    if f.dim() != d || a.nrows() != d || a.ncols() != d {
        return usage("dimension mismatch between test function, point and diffusion matrix");
    }
    let nb = betas.len();
    let hp = hess_pairing(f, x, a)?;
    let sd = sphere_area(d);
    let eps = q.inner_cut;
    let rad = q.outer_cut;
    let rules = Rules { fine: GaussLegendre::new(q.radial_nodes), coarse: GaussLegendre::new(q.radial_nodes / 2) };
    let fx = f.value(x);
    let sphere = q.sphere(d, false);
    let npairs = sphere.len() / 2;

    // Tail reach from the growth of the second difference along a few directions.
    let mut growth = f64::NEG_INFINITY;
    let probes = npairs.min(6);
    for j in 0..probes {
        let theta = sphere.point(2 * (j * npairs / probes));
        let u: Vec<f64> = (a * nalgebra::DVector::from_column_slice(theta)).iter().copied().collect();
        let mut dir = Direction { f, x, fx, u, p: alloc::vec![0.0; d] };
        growth = growth.max(growth_exponent(&mut dir, rad));
    }
    let beta_min = betas.iter().copied().fold(f64::INFINITY, f64::min);
    if growth >= beta_min {
        return Err(Error::UnboundedTail { growth, alpha: beta_min });
    }
    let decay = beta_min - growth.max(0.0);
    let s_max = (33.0 / decay).min(400.0);

    // Panels on [eps, 1] grow geometrically, [1, R] is uniform.
    let mut band_breaks = alloc::vec![1.0];
    while *band_breaks.last().unwrap() * 0.5 > eps {
        let v = band_breaks.last().unwrap() * 0.5;
        band_breaks.push(v);
    }
    band_breaks.push(eps);
    band_breaks.reverse();
    let n_outer = ((rad - 1.0) / q.panel_width).ceil().max(1.0) as usize;
    let n_tail = (s_max / 0.5).ceil() as usize;

    let run = |rule: &SphereRule, with_err: bool| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut band = alloc::vec![0.0; nb];
        let mut outer = alloc::vec![0.0; nb];
        let mut err = alloc::vec![0.0; nb];
        let mut inner_err = alloc::vec![0.0; nb];
        let mut pair_values: Vec<f64> = Vec::new();
        let mut tail_rem = alloc::vec![0.0; nb];
        let (mut fb, mut cb) = (alloc::vec![0.0; nb], alloc::vec![0.0; nb]);
        let (mut fo, mut co) = (alloc::vec![0.0; nb], alloc::vec![0.0; nb]);
        let (mut fi, mut ci) = (alloc::vec![0.0; nb], alloc::vec![0.0; nb]);
        for k in 0..rule.len() / 2 {
            let theta = rule.point(2 * k);
            let w = rule.weights[2 * k];
            let u: Vec<f64> = (a * nalgebra::DVector::from_column_slice(theta)).iter().copied().collect();
            let quad_form: f64 = {
                let mut s = 0.0;
                let mut h = alloc::vec![0.0; d * d];
                f.hessian(x, &mut h);
                for i in 0..d {
                    for j in 0..d {
                        s += u[i] * h[i * d + j] * u[j];
                    }
                }
                s
            };
            let mut dir = Direction { f, x, fx, u, p: alloc::vec![0.0; d] };
            fb.iter_mut().chain(cb.iter_mut()).chain(fo.iter_mut()).chain(co.iter_mut()).for_each(|v| *v = 0.0);
            for wdw in band_breaks.windows(2) {
                panel(&mut dir, &rules, wdw[0], wdw[1], betas, &mut fb, &mut cb);
            }
            for j in 0..n_outer {
                let lo = 1.0 + j as f64 * q.panel_width;
                let hi = (lo + q.panel_width).min(rad);
                panel(&mut dir, &rules, lo, hi, betas, &mut fo, &mut co);
            }
            for j in 0..n_tail {
                let s0 = 0.5 * j as f64;
                tail_panel(&mut dir, &rules, rad, s0, (s0 + 0.5).min(s_max), betas, &mut fo, &mut co);
            }
            if with_err {
                // Inner Taylor remainder, extrapolated from the panel [eps/2, eps].
                fi.iter_mut().chain(ci.iter_mut()).for_each(|v| *v = 0.0);
                panel(&mut dir, &rules, 0.5 * eps, eps, betas, &mut fi, &mut ci);
                let r_far = rad * s_max.exp();
                let m = dir.second_difference(r_far).abs().max(dir.second_difference(0.5 * r_far).abs());
                for (kb, beta) in betas.iter().enumerate() {
                    let taylor = quad_form * (eps.powf(2.0 - beta) - (0.5 * eps).powf(2.0 - beta)) / (2.0 - beta);
                    inner_err[kb] += w * (fi[kb] - taylor).abs() / (1.0 - 2f64.powf(-(4.0 - beta)));
                    err[kb] += w * ((fb[kb] - cb[kb]).abs() + (fo[kb] - co[kb]).abs());
                    tail_rem[kb] += w * 2.0 * m * r_far.powf(-beta) / beta;
                }
            }
            for kb in 0..nb {
                band[kb] += w * fb[kb];
                outer[kb] += w * fo[kb];
            }
            pair_values.push(fb[0] + fo[0]);
        }
        for kb in 0..nb {
            err[kb] += inner_err[kb] + tail_rem[kb];
        }
        if rule.monte_carlo {
            // Pairs are i.i.d.; their spread gives the sphere error.
            let w = rule.weights[0];
            let se = std_error(&pair_values) * w * pair_values.len() as f64;
            err.iter_mut().for_each(|e| *e += se);
        }
        (band, outer, err, inner_err, tail_rem)
    };

    let (band, outer, mut err, _, _) = run(&sphere, true);
    if (2..=3).contains(&d) {
        let (b2, o2, _, _, _) = run(&q.sphere(d, true), false);
        for k in 0..nb {
            err[k] += (band[k] + outer[k] - b2[k] - o2[k]).abs();
        }
    }
    let moment = sd / (2.0 * d as f64) * hp;
    let inner = betas.iter().map(|b| moment * eps.powf(2.0 - b) / (2.0 - b)).collect();
    let band_taylor = betas.iter().map(|b| moment * (1.0 - eps.powf(2.0 - b)) / (2.0 - b)).collect();
    // Rounding floor so the estimate is never exactly zero.
    let scale: Vec<f64> = (0..nb).map(|k| band[k].abs() + outer[k].abs()).collect();
    for k in 0..nb {
        err[k] += 1e-13 * (1.0 + scale[k]);
    }
    Ok(RawJump { inner, band, band_taylor, outer, err, hess_pairing: hp })
}

fn alpha_check(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(domain("alpha", alpha));
    }
    Ok(())
}

/// `L^alpha_sigma f(x)` for `sigma(x) = sigma_at_x` (row-major).
pub fn fractional_generator_apply(
    f: &dyn TestFunction,
    x: &[f64],
    sigma_at_x: &[f64],
    alpha: f64,
    quad: &QuadratureConfig,
) -> Result<GeneratorEvaluation> {
    alpha_check(alpha)?;
    let d = x.len();
    let a = DMatrix::from_row_slice(d, d, sigma_at_x);
    let raw = raw_jump(f, x, &a, &[alpha], quad)?;
    let c = levy_constant(d, alpha)?;
    Ok(GeneratorEvaluation { value: c * raw.total(0), quad_error_estimate: c * raw.err[0], pieces: Vec::new() })
}

fn drift_term(f: &dyn TestFunction, x: &[f64], model: &dyn ModelSpec) -> Result<f64> {
    let d = x.len();
    let mut g = alloc::vec![0.0; d];
    if !f.gradient(x, &mut g) {
        return usage("the test function has no gradient at this point");
    }
    Ok(model.drift_vec(x).iter().zip(&g).map(|(b, g)| b * g).sum())
}

fn brownian_term(f: &dyn TestFunction, x: &[f64], model: &dyn ModelSpec) -> Result<f64> {
    let d = x.len();
    let a = DMatrix::from_row_slice(d, d, &model.diffusion_vec(x));
    Ok(0.5 * hess_pairing(f, x, &a)?)
}

/// `A f(x)`: the drift term plus the nonlocal (stable, `alpha < 2`) or the
/// second-order (Brownian, or `alpha = 2`) diffusion term.
pub fn full_generator(
    f: &dyn TestFunction,
    x: &[f64],
    model: &dyn ModelSpec,
    kind: NoiseKind,
    quad: &QuadratureConfig,
) -> Result<GeneratorEvaluation> {
    if x.len() != model.dim() {
        return usage("point dimension differs from the model");
    }
    let drift = drift_term(f, x, model)?;
    let (name, value, err) = match kind {
        NoiseKind::Stable(a) if !a.is_brownian() => {
            let e = fractional_generator_apply(f, x, &model.diffusion_vec(x), a.value(), quad)?;
            ("nonlocal", e.value, e.quad_error_estimate)
        }
        NoiseKind::Stable(_) | NoiseKind::Brownian => ("diffusion", brownian_term(f, x, model)?, 0.0),
        NoiseKind::Zero => ("diffusion", 0.0, 0.0),
    };
    Ok(GeneratorEvaluation::from_pieces(alloc::vec![(name, value), ("drift", drift)], err))
}

/// `(A^alpha - A^Q) f(x) = J1 + J21 + J22`: the jump integral outside the unit
/// ball, the closed-form normalization mismatch
/// `(c S_d / (2d(2-alpha)) - 1/2) <Hess f, A A^T>`, and the third-order Taylor
/// remainder inside the ball.
pub fn generator_gap_stable_vs_brownian(
    f: &dyn TestFunction,
    x: &[f64],
    model: &dyn ModelSpec,
    alpha: f64,
    quad: &QuadratureConfig,
) -> Result<GeneratorEvaluation> {
    alpha_check(alpha)?;
    let d = x.len();
    let a = DMatrix::from_row_slice(d, d, &model.diffusion_vec(x));
    let raw = raw_jump(f, x, &a, &[alpha], quad)?;
    let c = levy_constant(d, alpha)?;
    let ratio = normalization_ratio(d, alpha)?;
    let j1 = c * raw.outer[0];
    let j21 = 0.5 * (ratio - 1.0) * raw.hess_pairing;
    let j22 = c * (raw.band[0] - raw.band_taylor[0]);
    Ok(GeneratorEvaluation::from_pieces(alloc::vec![("J1", j1), ("J21", j21), ("J22", j22)], c * raw.err[0]))
}

/// `(A^alpha - A^vartheta) f(x) = JJ1 + JJ2` with
/// `JJ1 = c_alpha (I_alpha - I_vartheta)` (kernel difference) and
/// `JJ2 = (c_alpha - c_vartheta) I_vartheta` (constant difference), where `I`
/// is the compensated integral without its constant.
pub fn generator_gap_stable_vs_stable(
    f: &dyn TestFunction,
    x: &[f64],
    model: &dyn ModelSpec,
    alpha: f64,
    vartheta: f64,
    quad: &QuadratureConfig,
) -> Result<GeneratorEvaluation> {
    alpha_check(alpha)?;
    alpha_check(vartheta)?;
    if alpha > vartheta {
        return usage("expects alpha <= vartheta");
    }
    let d = x.len();
    let a = DMatrix::from_row_slice(d, d, &model.diffusion_vec(x));
    let raw = raw_jump(f, x, &a, &[alpha, vartheta], quad)?;
    let (ca, cv) = (levy_constant(d, alpha)?, levy_constant(d, vartheta)?);
    let (ia, iv) = (raw.total(0), raw.total(1));
    let jj1 = ca * (ia - iv);
    let jj2 = (ca - cv) * iv;
    let err = ca * raw.err[0] + cv * raw.err[1];
    Ok(GeneratorEvaluation::from_pieces(alloc::vec![("JJ1", jj1), ("JJ2", jj2)], err))
}

/// Monte Carlo settings for semigroup probes.
#[derive(Clone, Debug, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KolmogorovResidual {
    /// `mean(D - A) / stderr(D - A)`; zero when both vanish.
    pub residual: f64,
    /// Central time difference of `P_t f(x)`.
    pub time_derivative: f64,
    /// `P_t (A f)(x)`.
    pub generator_mean: f64,
    pub stderr: f64,
    /// The 3-sigma band is wider than both compared quantities.
    pub noise_dominated: bool,
}

/// Compares `(P_{t+h} f - P_{t-h} f)(x) / 2h` with `P_t(A f)(x)` path by path
/// on one common-random-number ensemble (`h` is a multiple of `dt`).
pub fn kolmogorov_residual(
    model: &dyn ModelSpec,
    f: &dyn TestFunction,
    x: &[f64],
    t: f64,
    h: f64,
    kind: NoiseKind,
    mc: &McConfig,
    quad: &QuadratureConfig,
) -> Result<KolmogorovResidual> {
    if !(t > 0.0 && h > 0.0 && h < t) {
        return usage("need 0 < h < t");
    }
    let cfg = IntegratorConfig::new(mc.dt, t + h, mc.n_paths, kind);
    cfg.validate()?;
    let times = [t - h, t, t + h];
    record_steps(&cfg, &times)?;
    let snaps = simulate_snapshots(model, &cfg, &InitialCondition::Point(x.to_vec()), mc.seed, &times)?;
    let n = snaps[0].len();
    let mut diffs = Vec::with_capacity(n);
    let mut dts = Vec::with_capacity(n);
    let mut gens = Vec::with_capacity(n);
    for i in 0..n {
        let dtv = (f.value(snaps[2].row(i)) - f.value(snaps[0].row(i))) / (2.0 * h);
        let g = full_generator(f, snaps[1].row(i), model, kind, quad)?.value;
        dts.push(dtv);
        gens.push(g);
        diffs.push(dtv - g);
    }
    let m = mean(&diffs);
    let se = std_error(&diffs);
    let residual = if se > 0.0 { m / se } else if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY };
    let (td, gm) = (mean(&dts), mean(&gens));
    let noise_dominated = se > 0.0 && 3.0 * se > td.abs().max(gm.abs());
    Ok(KolmogorovResidual { residual, time_derivative: td, generator_mean: gm, stderr: se, noise_dominated })
}

/// Settings for [`semigroup_gradient_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientProbeConfig {
    pub n_paths: usize,
    /// Euler steps per simulated horizon.
    pub steps: usize,
    /// Finite-difference half-width is `h_rel t^{1/index}` (the noise scale).
    pub h_rel: f64,
    pub probes: Vec<Vec<f64>>,
    pub direction: Vec<f64>,
    pub seed: u64,
    pub level: f64,
}

impl GradientProbeConfig {
    pub fn new(dim: usize, n_paths: usize, seed: u64) -> Self {
        let mut e1 = alloc::vec![0.0; dim];
        e1[0] = 1.0;
        let at = |v: f64| {
            let mut p = alloc::vec![0.0; dim];
            p[0] = v;
            p
        };
        Self {
            n_paths,
            steps: 100,
            h_rel: 0.5,
            probes: alloc::vec![at(0.0), at(0.5), at(2.0)],
            direction: e1,
            seed,
            level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientProbe {
    pub order: usize,
    pub t: Vec<f64>,
    /// Largest `|directional derivative|` over the probes at each t.
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Coefficient of `log t` in `log estimate ~ a + p log t + q t + r t^2`;
    /// the polynomial terms absorb smooth drift and discretization corrections.
    pub exponent: f64,
    pub exponent_ci: (f64, f64),
    /// CI wider than 0.5.
    pub inconclusive: bool,
}

// Euler paths from several starting points on shared noise; returns the
// terminal states per start, row-major.
fn crn_terminal(
    model: &dyn ModelSpec,
    kind: NoiseKind,
    starts: &[Vec<f64>],
    t: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = model.dim();
    let dt = t / steps as f64;
    let mut out = alloc::vec![Vec::with_capacity(n_paths * d); starts.len()];
    let mut scratch = crate::sde::StepScratch::new(d);
    let mut inc = alloc::vec![0.0; d];
    let mut y = alloc::vec![0.0; d];
    let mut xs: Vec<Vec<f64>> = starts.to_vec();
    let sampler = kind.sampler(d, dt)?;
    for p in 0..n_paths {
        let mut rng = RngStream::for_path(seed, lane::PATH, p as u64);
        for (x, s) in xs.iter_mut().zip(starts) {
            x.copy_from_slice(s);
        }
        for _ in 0..steps {
            sampler.fill(&mut rng, &mut inc);
            for x in xs.iter_mut() {
                crate::sde::em_step_into(x, model, dt, &inc, &mut y, &mut scratch)?;
                x.copy_from_slice(&y);
            }
        }
        for (o, x) in out.iter_mut().zip(&xs) {
            o.extend_from_slice(x);
        }
    }
    Ok(out)
}

/// Fits the small-time exponent of `|grad^n P_t g|` (n = 1, 2) from
/// common-random-number finite differences over initial conditions.
pub fn semigroup_gradient_probe(
    model: &dyn ModelSpec,
    g: &dyn TestFunction,
    t_grid: &[f64],
    order: usize,
    kind: NoiseKind,
    cfg: &GradientProbeConfig,
) -> Result<GradientProbe> {
    if !(order == 1 || order == 2) {
        return usage("order must be 1 or 2");
    }
    if t_grid.len() < 6 || t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return usage("need at least six times in (0, 1]");
    }
    let d = model.dim();
    let index = kind.index();
    let mut estimates = Vec::new();
    let mut stderrs = Vec::new();
    for (k, &t) in t_grid.iter().enumerate() {
        let eps = cfg.h_rel * t.powf(1.0 / index);
        let (mut best, mut best_se) = (-1.0, 0.0);
        for x in &cfg.probes {
            let shift = |s: f64| -> Vec<f64> { x.iter().zip(&cfg.direction).map(|(a, e)| a + s * eps * e).collect() };
            let starts = alloc::vec![shift(-1.0), x.clone(), shift(1.0)];
            let seed = cfg.seed.wrapping_add(k as u64);
            let ends = crn_terminal(model, kind, &starts, t, cfg.steps, cfg.n_paths, seed)?;
            let vals: Vec<f64> = (0..cfg.n_paths)
                .map(|i| {
                    let v = |s: usize| g.value(&ends[s][i * d..(i + 1) * d]);
                    if order == 1 {
                        (v(2) - v(0)) / (2.0 * eps)
                    } else {
                        (v(2) - 2.0 * v(1) + v(0)) / (eps * eps)
                    }
                })
                .collect();
            let m = mean(&vals).abs();
            if m > best {
                best = m;
                best_se = std_error(&vals);
            }
        }
        estimates.push(best);
        stderrs.push(best_se);
    }
    if estimates.iter().any(|&e| !(e > 0.0)) {
        return usage("a gradient estimate vanished; cannot fit on a log scale");
    }
    let rel: Vec<f64> = stderrs.iter().zip(&estimates).map(|(s, e)| s / e).collect();
    let (exponent, exponent_ci) = fit_exponent(t_grid, &estimates, &rel, cfg.level)?;
    let inconclusive = exponent_ci.1 - exponent_ci.0 > 0.5;
    Ok(GradientProbe { order, t: t_grid.to_vec(), estimates, stderrs, exponent, exponent_ci, inconclusive })
}

// Least squares of log y on (1, log t, t, t^2); returns the log t coefficient and
// its t-based CI. The standard error is the larger of the residual-based one
// and the one propagated from the per-point Monte Carlo errors `rel_se` of
// log y, floored at rounding level.
fn fit_exponent(t: &[f64], y: &[f64], rel_se: &[f64], level: f64) -> Result<(f64, (f64, f64))> {
    let n = t.len();
    let xm = DMatrix::from_fn(n, 4, |i, j| match j {
        0 => 1.0,
        1 => t[i].ln(),
        2 => t[i],
        _ => t[i] * t[i],
    });
    let ym = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v.ln()));
    let xtx = xm.transpose() * &xm;
    let inv = xtx.try_inverse().ok_or_else(|| Error::Usage("degenerate time grid".into()))?;
    let beta = &inv * xm.transpose() * &ym;
    let resid = &ym - &xm * &beta;
    let dof = n.saturating_sub(4);
    if dof == 0 {
        return usage("need at least five times");
    }
    let s2 = resid.norm_squared() / dof as f64;
    let se_resid = (s2 * inv[(1, 1)]).sqrt();
    let lever = &inv * xm.transpose();
    let se_mc = (0..n).map(|i| (lever[(1, i)] * rel_se[i]).powi(2)).sum::<f64>().sqrt();
    let se = se_resid.max(se_mc).max(1e-8);
    let q = crate::special::student_t_quantile(0.5 + 0.5 * level, dof as f64);
    Ok((beta[1], (beta[1] - q * se, beta[1] + q * se)))
}

/// Plain log-log slope fit, for callers without drift corrections.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}
