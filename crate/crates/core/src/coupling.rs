//! Comparison functions for reflection coupling, the reflection-coupled
//! Brownian SDE, overlap integrals of shifted truncated stable jump measures,
//! empirical contraction rates and the explicit stable contraction constants.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use crate::math::Float;
use crate::error::{domain, usage, Error, Result};
use crate::generator::levy_constant;
use crate::quad::{adaptive, gk15, Adaptive, GaussLegendre, SphereRule};
use crate::rng::{lane, RngStream};
use crate::sde::{
    sigma_tilde, simulate_snapshots, Ensemble, EnsembleMeta, InitialCondition, IntegratorConfig, ModelSpec, NoiseKind,
    ParamTuple,
};
use crate::special::{sphere_area, student_t_quantile};
use crate::stable::StabilityIndex;
use crate::stats::{linear_fit, mean, std_error};
use crate::wasserstein::{w1_assignment, w1_sorted_samples};

// ---------------------------------------------------------------------------
// kappa and the concave comparison function

/// `kappa(r) = c0 - c1/r` on `(0, 1]` and `c0 - c1/r^2` beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaSpec {
    pub c0: f64,
    pub c1: f64,
}

impl KappaSpec {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(domain("c0", c0));
        }
        if !(c1 >= 0.0 && c1.is_finite()) {
            return Err(domain("c1", c1));
        }
        Ok(Self { c0, c1 })
    }

    pub fn kappa(&self, r: f64) -> f64 {
        if r <= 1.0 {
            self.c0 - self.c1 / r
        } else {
            self.c0 - self.c1 / (r * r)
        }
    }

    /// `r * kappa(r)`, finite at 0.
    pub fn r_kappa(&self, r: f64) -> f64 {
        if r <= 1.0 {
            self.c0 * r - self.c1
        } else {
            self.c0 * r - self.c1 / r
        }
    }

    /// Smallest `s` with `kappa >= 0` on `[s, inf)`.
    pub fn r0(&self) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else if self.c0 >= self.c1 {
            self.c1 / self.c0
        } else {
            (self.c1 / self.c0).sqrt()
        }
    }

    /// `int_0^r (s kappa(s))^- ds`.
    pub fn negative_part_integral(&self, r: f64) -> f64 {
        let r = r.min(self.r0());
        let (c0, c1) = (self.c0, self.c1);
        if r <= 1.0 {
            c1 * r - 0.5 * c0 * r * r
        } else {
            (c1 - 0.5 * c0) + c1 * r.ln() - 0.5 * c0 * (r * r - 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiGridConfig {
    /// Cells on `[0, r1]`.
    pub cells: usize,
    /// Relative tolerance of the pointwise property checks.
    pub tol: f64,
    /// Checks extend to `check_factor * r1 + 1`.
    pub check_factor: f64,
    /// Number of automatic grid doublings before a property failure is reported.
    pub refinements: usize,
}

impl Default for PsiGridConfig {
    fn default() -> Self {
        Self { cells: 256, tol: 1e-7, check_factor: 4.0, refinements: 2 }
    }
}

/// Tabulated concave comparison function `Psi = int phi g`.
///
/// `lambda` is the largest rate for which
/// `2 sigma0^2 Psi'' - (r kappa / 2) Psi' <= -lambda Psi` is certified by the
/// construction, namely `sigma0^2 / I1` with `I1 = int_0^r1 Phi/phi`.
/// `lambda_displayed = 2 sigma0^2 / I1` is the value of the closed-form
/// expression sometimes quoted for this construction; it violates the
/// inequality beyond `r1` (see `residual`).
#[derive(Clone, Debug)]
pub struct PsiFunction {
    pub kappa: KappaSpec,
    pub sigma0: f64,
    pub r0: f64,
    pub r1: f64,
    pub lambda: f64,
    pub lambda_displayed: f64,
    /// `int_0^r1 Phi/phi`.
    pub i1: f64,
    pub grid: Vec<f64>,
    pub phi_table: Vec<f64>,
    pub big_phi_table: Vec<f64>,
    /// `J(r) = int_0^r Phi/phi`; `g = 1 - J/(2 I1)`.
    pub j_table: Vec<f64>,
    pub g_table: Vec<f64>,
    pub psi_table: Vec<f64>,
}

/// Solve `h(s) = s (s - r0) kappa(s) = 8 sigma0^2` for `s >= r0`.
/// `h` is nondecreasing there and `kappa` increases with `r`, so the
/// "for all r >= s" condition reduces to a single crossing.
fn solve_r1(k: &KappaSpec, sigma0: f64) -> f64 {
    let r0 = k.r0();
    let target = 8.0 * sigma0 * sigma0;
    let h = |s: f64| s * (s - r0) * k.kappa(s);
    let mut lo = r0;
    let mut hi = r0 + 1.0;
    while h(hi) < target {
        hi = r0 + 2.0 * (hi - r0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

impl PsiFunction {
    pub fn phi(&self, r: f64) -> f64 {
        (-self.kappa.negative_part_integral(r.max(0.0)) / (self.sigma0 * self.sigma0)).exp()
    }

    fn phi_prime(&self, r: f64) -> f64 {
        let neg = (-self.kappa.r_kappa(r)).max(0.0);
        -neg / (self.sigma0 * self.sigma0) * self.phi(r)
    }

    fn cell(&self, r: f64) -> usize {
        let n = self.grid.len() - 1;
        match self.grid.binary_search_by(|g| g.total_cmp(&r)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    fn hermite(&self, table: &[f64], deriv: impl Fn(f64) -> f64, r: f64) -> f64 {
        let i = self.cell(r);
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let h = b - a;
        let t = (r - a) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * table[i]
            + (t3 - 2.0 * t2 + t) * h * deriv(a)
            + (-2.0 * t3 + 3.0 * t2) * table[i + 1]
            + (t3 - t2) * h * deriv(b)
    }

    /// `Phi(r) = int_0^r phi`.
    pub fn big_phi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r1 {
            let n = self.grid.len() - 1;
            return self.big_phi_table[n] + self.phi(self.r0) * (r - self.r1);
        }
        self.hermite(&self.big_phi_table, |s| self.phi(s), r)
    }

    fn j(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r1 {
            return self.i1;
        }
        self.hermite(&self.j_table, |s| self.big_phi(s) / self.phi(s), r)
    }

    pub fn g(&self, r: f64) -> f64 {
        1.0 - self.j(r) / (2.0 * self.i1)
    }

    pub fn psi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r1 {
            let n = self.grid.len() - 1;
            return self.psi_table[n] + 0.5 * self.phi(self.r0) * (r - self.r1);
        }
        self.hermite(&self.psi_table, |s| self.psi_prime(s), r)
    }

    pub fn psi_prime(&self, r: f64) -> f64 {
        self.phi(r) * self.g(r)
    }

    /// One-sided second derivative (from the left at `r1`).
    pub fn psi_second(&self, r: f64) -> f64 {
        let gp = if r < self.r1 { -self.big_phi(r) / (2.0 * self.i1) } else { 0.0 };
        self.phi_prime(r) * self.g(r) + gp
    }

    /// `2 sigma0^2 Psi'' - (r kappa / 2) Psi' + lambda Psi`; nonpositive where the
    /// differential inequality holds.
    pub fn residual(&self, r: f64, lambda: f64) -> f64 {
        2.0 * self.sigma0 * self.sigma0 * self.psi_second(r) - 0.5 * self.kappa.r_kappa(r) * self.psi_prime(r)
            + lambda * self.psi(r)
    }

    fn residual_scale(&self, r: f64, lambda: f64) -> f64 {
        1.0 + (2.0 * self.sigma0 * self.sigma0 * self.psi_second(r)).abs()
            + (0.5 * self.kappa.r_kappa(r) * self.psi_prime(r)).abs()
            + (lambda * self.psi(r)).abs()
    }

    /// Points at which the properties are checked: grid nodes and midpoints
    /// on `[0, r1]`, then a uniform extension past `r1`.
    pub fn check_points(&self, check_factor: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        for w in self.grid.windows(2) {
            pts.push(w[0]);
            pts.push(0.5 * (w[0] + w[1]));
        }
        let end = check_factor * self.r1 + 1.0;
        let n = self.grid.len();
        for k in 1..=n {
            pts.push(self.r1 + (end - self.r1) * k as f64 / n as f64);
        }
        pts
    }

    /// Verify `(r/2) phi(r0) <= Psi <= r`, `0 <= Psi' <= 1`, concavity and the
    /// differential inequality at `lambda` on the check points (skipping `r1`).
    pub fn verify(&self, lambda: f64, cfg: &PsiGridConfig) -> Result<()> {
        let tol = cfg.tol;
        let lower_slope = 0.5 * self.phi(self.r0);
        let pts = self.check_points(cfg.check_factor);
        for &r in &pts {
            let p = self.psi(r);
            let scale = 1.0 + r;
            if p > r + tol * scale {
                return Err(Error::PsiProperty { property: "psi <= r", r, residual: p - r });
            }
            if p < lower_slope * r - tol * scale {
                return Err(Error::PsiProperty { property: "psi >= r phi(r0)/2", r, residual: lower_slope * r - p });
            }
            let d = self.psi_prime(r);
            if !(-tol..=1.0 + tol).contains(&d) {
                return Err(Error::PsiProperty { property: "0 <= psi' <= 1", r, residual: d });
            }
            if self.psi_second(r) > tol {
                return Err(Error::PsiProperty { property: "concavity", r, residual: self.psi_second(r) });
            }
            if (r - self.r1).abs() > 1e-12 * (1.0 + self.r1) {
                let res = self.residual(r, lambda);
                if res > tol * self.residual_scale(r, lambda) {
                    return Err(Error::PsiProperty { property: "differential inequality", r, residual: res });
                }
            }
        }
        // discrete concavity of the table itself
        for k in 1..pts.len() - 1 {
            let (a, b, c) = (pts[k - 1], pts[k], pts[k + 1]);
            if !(a < b && b < c) {
                continue;
            }
            let (pa, pb, pc) = (self.psi(a), self.psi(b), self.psi(c));
            let second = ((pc - pb) / (c - b) - (pb - pa) / (b - a)) / (c - a);
            if second > tol * (1.0 + pb.abs()) / (c - a) {
                return Err(Error::PsiProperty { property: "discrete concavity", r: b, residual: second });
            }
        }
        Ok(())
    }
}

fn tabulate_psi(kappa: KappaSpec, sigma0: f64, cells: usize) -> PsiFunction {
    let r0 = kappa.r0();
    let r1 = solve_r1(&kappa, sigma0);
    let mut grid: Vec<f64> = (0..=cells).map(|k| r1 * k as f64 / cells as f64).collect();
    // kinks of phi' at r0 and of kappa at 1 become cell boundaries
    for brk in [r0, 1.0] {
        if brk > 0.0 && brk < r1 {
            let i = grid.partition_point(|&g| g < brk);
            if (grid[i] - brk).abs() > 1e-14 * r1 {
                let lo = grid[i - 1];
                if brk - lo < grid[i] - brk {
                    grid[i - 1] = brk;
                } else {
                    grid[i] = brk;
                }
            }
        }
    }
    grid.dedup();
    let mut psi = PsiFunction {
        kappa,
        sigma0,
        r0,
        r1,
        lambda: 0.0,
        lambda_displayed: 0.0,
        i1: 1.0,
        grid,
        phi_table: Vec::new(),
        big_phi_table: Vec::new(),
        j_table: Vec::new(),
        g_table: Vec::new(),
        psi_table: Vec::new(),
    };
    let n = psi.grid.len();
    let phi = |r: f64| (-kappa.negative_part_integral(r) / (sigma0 * sigma0)).exp();
    psi.phi_table = psi.grid.iter().map(|&r| phi(r)).collect();

    let mut big = alloc::vec![0.0; n];
    for i in 1..n {
        big[i] = big[i - 1] + gk15(&mut |s| phi(s), psi.grid[i - 1], psi.grid[i]).0;
    }
    // Phi inside a cell from its left end
    let big_in = |i: usize, base: f64, s: f64, grid: &[f64]| base + gk15(&mut |u| phi(u), grid[i], s).0;
    let mut j = alloc::vec![0.0; n];
    for i in 1..n {
        let a = psi.grid[i - 1];
        let inc = gk15(&mut |s| big_in(i - 1, big[i - 1], s, &psi.grid) / phi(s), a, psi.grid[i]).0;
        j[i] = j[i - 1] + inc;
    }
    let i1 = j[n - 1];
    let mut ps = alloc::vec![0.0; n];
    for i in 1..n {
        let a = psi.grid[i - 1];
        let (b0, j0) = (big[i - 1], j[i - 1]);
        let grid = &psi.grid;
        let inc = gk15(
            &mut |s| {
                let js = j0 + gk15(&mut |u| big_in(i - 1, b0, u, grid) / phi(u), a, s).0;
                phi(s) * (1.0 - js / (2.0 * i1))
            },
            a,
            psi.grid[i],
        )
        .0;
        ps[i] = ps[i - 1] + inc;
    }
    psi.g_table = j.iter().map(|v| 1.0 - v / (2.0 * i1)).collect();
    psi.big_phi_table = big;
    psi.j_table = j;
    psi.psi_table = ps;
    psi.i1 = i1;
    psi.lambda = sigma0 * sigma0 / i1;
    psi.lambda_displayed = 2.0 * sigma0 * sigma0 / i1;
    psi
}

/// Build and verify the comparison function; refines the grid up to
/// `cfg.refinements` times before reporting the violated property.
pub fn build_psi(kappa: KappaSpec, sigma0: f64, cfg: PsiGridConfig) -> Result<PsiFunction> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(domain("sigma0", sigma0));
    }
    if cfg.cells < 4 {
        return usage("psi grid needs at least 4 cells");
    }
    let mut cells = cfg.cells;
    let mut last = None;
    for _ in 0..=cfg.refinements {
        let psi = tabulate_psi(kappa, sigma0, cells);
        match psi.verify(psi.lambda, &cfg) {
            Ok(()) => return Ok(psi),
            Err(e) => last = Some(e),
        }
        cells *= 2;
    }
    Err(last.unwrap())
}

// ---------------------------------------------------------------------------
// reflection coupling

#[derive(Clone, Debug)]
pub struct CoupledBlock {
    pub paths: Range<u64>,
    /// Row-major `paths x times` distances `|Y~ - Y|`.
    pub distances: Vec<f64>,
    /// Coupling time per path (`inf` if not coupled by `t_end`).
    pub coupling_times: Vec<f64>,
    pub y_end: Vec<f64>,
    pub ytilde_end: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    pub mean_distance: Vec<f64>,
    pub distance_se: Vec<f64>,
    pub coupled_fraction: Vec<f64>,
    pub coupling_times: Vec<f64>,
    /// `Y` started at `y`.
    pub y: Ensemble,
    /// `Y~` started at `x`.
    pub ytilde: Ensemble,
    pub merge_threshold: f64,
}

fn check_reflection_inputs(model: &dyn ModelSpec, sigma0: f64, x: &[f64], y: &[f64], cfg: &IntegratorConfig) -> Result<()> {
    cfg.validate()?;
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return usage("start points must match the model dimension");
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(domain("sigma0", sigma0));
    }
    if !matches!(cfg.noise, NoiseKind::Brownian) {
        return usage("reflection coupling is defined for Brownian noise");
    }
    Ok(())
}

/// Simulate pairs `paths` of the reflection coupling
/// `dY = b dt + s~(Y) dB~ + s0 dB`, `dY~ = b dt + s~(Y~) dB~ + s0 (I - 2ee*) dB`
/// from `Y~_0 = x`, `Y_0 = y`, recording `|Y~ - Y|` at `times`.
///
/// Paths are glued at the first step where the reflected component crosses
/// zero, where `|Y~ - Y|` drops below `1e-6 |x - y|`, or (with the Brownian
/// bridge probability) where the continuous paths met between grid points.
pub fn reflection_coupling_block(
    model: &dyn ModelSpec,
    sigma0: f64,
    x: &[f64],
    y: &[f64],
    cfg: &IntegratorConfig,
    seed: u64,
    times: &[f64],
    paths: Range<u64>,
) -> Result<CoupledBlock> {
    check_reflection_inputs(model, sigma0, x, y, cfg)?;
    let d = model.dim();
    let dt = cfg.dt;
    let steps = cfg.steps();
    let record: Vec<usize> = times.iter().map(|&t| cfg.step_of(t)).collect::<Result<_>>()?;
    let r_start = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let delta = 1e-6 * r_start;
    let np = (paths.end - paths.start) as usize;
    let nt = times.len();
    let mut out = CoupledBlock {
        paths: paths.clone(),
        distances: alloc::vec![0.0; np * nt],
        coupling_times: alloc::vec![f64::INFINITY; np],
        y_end: alloc::vec![0.0; np * d],
        ytilde_end: alloc::vec![0.0; np * d],
    };
    let sq = dt.sqrt();
    let (mut by, mut bt) = (alloc::vec![0.0; d], alloc::vec![0.0; d]);
    let (mut db, mut dbt, mut refl) = (alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d]);
    let mut e = alloc::vec![0.0; d];
    let mut sig = alloc::vec![0.0; d * d];
    for (pi, p) in paths.enumerate() {
        let mut rb = RngStream::for_path(seed, lane::COUPLING_SHARED, p);
        let mut rbt = RngStream::for_path(seed, lane::COUPLING_OWN_X, p);
        let mut ru = RngStream::for_path(seed, lane::AUX, p);
        let mut yv = y.to_vec();
        let mut yt = x.to_vec();
        let mut coupled = r_start == 0.0;
        if coupled {
            out.coupling_times[pi] = 0.0;
        }
        let mut next = 0;
        let mut dist = r_start;
        while next < nt && record[next] == 0 {
            out.distances[pi * nt + next] = dist;
            next += 1;
        }
        for k in 0..steps {
            rb.fill_normal(&mut db);
            rbt.fill_normal(&mut dbt);
            db.iter_mut().for_each(|v| *v *= sq);
            dbt.iter_mut().for_each(|v| *v *= sq);
            let u = ru.open01();
            model.drift(&yv, &mut by);
            model.diffusion(&yv, &mut sig);
            let sty = sigma_tilde(&sig, d, sigma0, &yv)?;
            let ny: Vec<f64> = {
                let noise = &sty * DVector::from_column_slice(&dbt);
                (0..d).map(|i| yv[i] + by[i] * dt + noise[i] + sigma0 * db[i]).collect()
            };
            if coupled {
                yv = ny;
                yt.copy_from_slice(&yv);
            } else {
                for i in 0..d {
                    e[i] = (yt[i] - yv[i]) / dist;
                }
                let proj: f64 = e.iter().zip(&db).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    refl[i] = db[i] - 2.0 * e[i] * proj;
                }
                debug_assert!({
                    let n0: f64 = db.iter().map(|v| v * v).sum();
                    let n1: f64 = refl.iter().map(|v| v * v).sum();
                    (n0 - n1).abs() <= 1e-9 * (1.0 + n0)
                });
                model.drift(&yt, &mut bt);
                model.diffusion(&yt, &mut sig);
                let stt = sigma_tilde(&sig, d, sigma0, &yt)?;
                let noise = &stt * DVector::from_column_slice(&dbt);
                let nyt: Vec<f64> = (0..d).map(|i| yt[i] + bt[i] * dt + noise[i] + sigma0 * refl[i]).collect();
                let nd = nyt.iter().zip(&ny).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let along: f64 = (0..d).map(|i| (nyt[i] - ny[i]) * e[i]).sum();
                let bridge = if along > 0.0 {
                    (-2.0 * dist * along / (4.0 * sigma0 * sigma0 * dt)).exp()
                } else {
                    1.0
                };
                yv = ny;
                if along <= 0.0 || nd < delta || u < bridge {
                    coupled = true;
                    out.coupling_times[pi] = (k + 1) as f64 * dt;
                    yt.copy_from_slice(&yv);
                    dist = 0.0;
                } else {
                    yt = nyt;
                    dist = nd;
                }
            }
            if coupled {
                dist = 0.0;
            }
            while next < nt && record[next] == k + 1 {
                out.distances[pi * nt + next] = dist;
                next += 1;
            }
        }
        out.y_end[pi * d..(pi + 1) * d].copy_from_slice(&yv);
        out.ytilde_end[pi * d..(pi + 1) * d].copy_from_slice(&yt);
    }
    Ok(out)
}

/// Combine blocks (in path order) into a [`CoupledRun`].
pub fn assemble_coupled(
    model: &dyn ModelSpec,
    cfg: &IntegratorConfig,
    seed: u64,
    x: &[f64],
    y: &[f64],
    times: &[f64],
    blocks: Vec<CoupledBlock>,
) -> CoupledRun {
    let d = model.dim();
    let nt = times.len();
    let mut per_time: Vec<Vec<f64>> = alloc::vec![Vec::new(); nt];
    let mut tau = Vec::new();
    let (mut ye, mut yte) = (Vec::new(), Vec::new());
    for b in blocks {
        for row in b.distances.chunks_exact(nt.max(1)) {
            for (k, v) in row.iter().enumerate() {
                per_time[k].push(*v);
            }
        }
        tau.extend(b.coupling_times);
        ye.extend(b.y_end);
        yte.extend(b.ytilde_end);
    }
    let meta = EnsembleMeta { model: model.id(), config: cfg.clone(), seed };
    let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    CoupledRun {
        times: times.to_vec(),
        mean_distance: per_time.iter().map(|v| mean(v)).collect(),
        distance_se: per_time.iter().map(|v| std_error(v)).collect(),
        coupled_fraction: per_time
            .iter()
            .map(|v| v.iter().filter(|&&s| s == 0.0).count() as f64 / v.len().max(1) as f64)
            .collect(),
        coupling_times: tau,
        y: Ensemble { dim: d, points: ye, time: cfg.t_end, meta: meta.clone(), overflowed: Vec::new() },
        ytilde: Ensemble { dim: d, points: yte, time: cfg.t_end, meta, overflowed: Vec::new() },
        merge_threshold: 1e-6 * r,
    }
}

pub fn reflection_coupling_simulate(
    model: &dyn ModelSpec,
    sigma0: f64,
    x: &[f64],
    y: &[f64],
    cfg: &IntegratorConfig,
    seed: u64,
    times: &[f64],
) -> Result<CoupledRun> {
    let block = reflection_coupling_block(model, sigma0, x, y, cfg, seed, times, 0..cfg.n_paths as u64)?;
    Ok(assemble_coupled(model, cfg, seed, x, y, times, alloc::vec![block]))
}

/// Exponential decay fit of a positive curve: `log v = a - rate * t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_se: f64,
    pub ci: (f64, f64),
    pub used: usize,
}

pub fn fit_decay(t: &[f64], v: &[f64], level: f64) -> Option<DecayFit> {
    let (ts, ls): (Vec<f64>, Vec<f64>) =
        t.iter().zip(v).filter(|(_, v)| **v > 0.0 && v.is_finite()).map(|(t, v)| (*t, v.ln())).unzip();
    let fit = linear_fit(&ts, &ls)?;
    let n = fit.n;
    let q = if n > 2 { student_t_quantile(0.5 + 0.5 * level, (n - 2) as f64) } else { f64::INFINITY };
    let rate = -fit.slope;
    let half = q * fit.slope_se;
    Some(DecayFit { rate, rate_se: fit.slope_se, ci: (rate - half, rate + half), used: n })
}

/// Decay fit of the mean coupled distance using times at which at least
/// `min_uncoupled` paths are still apart.
pub fn coupled_decay_rate(run: &CoupledRun, t_max: f64, min_uncoupled: usize) -> Option<DecayFit> {
    let n = run.coupling_times.len() as f64;
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for k in 0..run.times.len() {
        let apart = (1.0 - run.coupled_fraction[k]) * n;
        if run.times[k] <= t_max && apart >= min_uncoupled as f64 {
            t.push(run.times[k]);
            v.push(run.mean_distance[k]);
        }
    }
    fit_decay(&t, &v, 0.95)
}

// ---------------------------------------------------------------------------
// overlap of shifted truncated jump measures

/// Truncated Lévy density `1{|z| <= eta} c |z|^{-d-alpha}` and the affine
/// shift `z -> sigma(y)^{-1} [sigma(x) z + (x - y)_kappa]`.
#[derive(Clone, Debug)]
pub struct JumpOverlapSpec {
    pub eta: f64,
    pub kappa_cap: f64,
    pub alpha: StabilityIndex,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Pointwise overlap densities `q_fwd`, `q_bwd`.
#[derive(Clone, Debug)]
pub struct OverlapDensity {
    pub dim: usize,
    eta: f64,
    alpha: f64,
    c: f64,
    sx: DMatrix<f64>,
    sy: DMatrix<f64>,
    sx_inv: DMatrix<f64>,
    sy_inv: DMatrix<f64>,
    shift: DVector<f64>,
    jac_fwd: f64,
}

impl OverlapDensity {
    pub fn new(model: &dyn ModelSpec, spec: &JumpOverlapSpec) -> Result<Self> {
        let d = model.dim();
        if spec.x.len() != d || spec.y.len() != d {
            return usage("overlap points must match the model dimension");
        }
        if !(spec.eta > 0.0) {
            return Err(domain("eta", spec.eta));
        }
        if !(spec.kappa_cap > 0.0) {
            return Err(domain("kappa_cap", spec.kappa_cap));
        }
        let diff: Vec<f64> = spec.x.iter().zip(&spec.y).map(|(a, b)| a - b).collect();
        let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return usage("overlap integrals need x != y");
        }
        let sx = DMatrix::from_row_slice(d, d, &model.diffusion_vec(&spec.x));
        let sy = DMatrix::from_row_slice(d, d, &model.diffusion_vec(&spec.y));
        let sx_inv = sx.clone().try_inverse().ok_or_else(|| Error::SingularDiffusion { point: spec.x.clone() })?;
        let sy_inv = sy.clone().try_inverse().ok_or_else(|| Error::SingularDiffusion { point: spec.y.clone() })?;
        let jac_fwd = (&sx_inv * &sy).determinant().abs();
        if !(jac_fwd.is_finite() && jac_fwd > 0.0) {
            return Err(Error::SingularDiffusion { point: spec.x.clone() });
        }
        let cap = spec.kappa_cap.min(r) / r;
        let shift = DVector::from_iterator(d, diff.iter().map(|v| v * cap));
        let alpha = spec.alpha.value();
        Ok(Self { dim: d, eta: spec.eta, alpha, c: levy_constant(d, alpha)?, sx, sy, sx_inv, sy_inv, shift, jac_fwd })
    }

    pub fn nu0(&self, z: &[f64]) -> f64 {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.nu0_radius(r)
    }

    fn nu0_radius(&self, r: f64) -> f64 {
        if r > self.eta || r == 0.0 {
            if r == 0.0 {
                return f64::INFINITY;
            }
            return 0.0;
        }
        self.c * r.powf(-(self.dim as f64) - self.alpha)
    }

    /// `min(nu0(z), nu0(Psi^{-1} z) |det sigma(x)^{-1} sigma(y)|)`.
    pub fn fwd(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        let w = &self.sx_inv * (&self.sy * zv - &self.shift);
        self.nu0(z).min(self.nu0_radius(w.norm()) * self.jac_fwd)
    }

    /// `min(nu0(z), nu0(Psi z) |det sigma(y)^{-1} sigma(x)|)`.
    pub fn bwd(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        let w = &self.sy_inv * (&self.sx * zv + &self.shift);
        self.nu0(z).min(self.nu0_radius(w.norm()) / self.jac_fwd)
    }

    /// Radius of the shift seen from either side; sets the inner scale.
    fn scale(&self) -> f64 {
        let a = (&self.sy_inv * &self.shift).norm();
        let b = (&self.sx_inv * &self.shift).norm();
        a.min(b).min(self.shift.norm()).min(self.eta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapQuadrature {
    /// Radial Gauss–Legendre panels per octave.
    pub panels_per_octave: usize,
    pub radial_nodes: usize,
    /// Sphere resolution (d = 2: points per half circle; d = 3: polar nodes).
    pub sphere_level: usize,
    /// Monte Carlo samples for d > 3.
    pub mc_samples: usize,
    pub seed: u64,
}

impl OverlapQuadrature {
    pub fn for_dim(d: usize) -> Self {
        let sphere_level = match d {
            1 => 1,
            2 => 512,
            _ => 48,
        };
        Self { panels_per_octave: 4, radial_nodes: 8, sphere_level, mc_samples: 400_000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapIntegrals {
    pub mass_fwd: f64,
    pub mass_bwd: f64,
    /// `int |z|^m (q_fwd + q_bwd)`.
    pub moment_m: f64,
    /// Half-resolution difference (deterministic) or Monte Carlo standard error.
    pub error_estimate: f64,
    pub monte_carlo: bool,
}

impl OverlapIntegrals {
    pub fn mass(&self) -> f64 {
        self.mass_fwd + self.mass_bwd
    }
}

/// Positive roots of `a r^2 + b r + c = 0`.
fn positive_roots(a: f64, b: f64, c: f64, out: &mut Vec<f64>) {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return;
    }
    if a.abs() <= 1e-14 * scale {
        if b != 0.0 && -c / b > 0.0 {
            out.push(-c / b);
        }
        return;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    for r in [q / a, if q != 0.0 { c / q } else { f64::NAN }] {
        if r > 0.0 && r.is_finite() {
            out.push(r);
        }
    }
}

impl OverlapDensity {
    /// Radii along `theta` where `q_fwd` or `q_bwd` has a kink: the shifted
    /// density leaves its support or crosses the unshifted one.
    fn ray_kinks(&self, theta: &[f64], out: &mut Vec<f64>) {
        let d = self.dim as f64;
        let t = DVector::from_column_slice(theta);
        let sides = [
            (&self.sx_inv * &self.sy * &t, -(&self.sx_inv * &self.shift), self.jac_fwd),
            (&self.sy_inv * &self.sx * &t, &self.sy_inv * &self.shift, 1.0 / self.jac_fwd),
        ];
        for (mt, c, jac) in sides.iter() {
            let (mm, mc, cc) = (mt.norm_squared(), mt.dot(c), c.norm_squared());
            positive_roots(mm, 2.0 * mc, cc - self.eta * self.eta, out);
            let j = jac.powf(1.0 / (d + self.alpha));
            positive_roots(mm - j * j, 2.0 * mc, cc, out);
        }
    }
}

fn polar_overlap(q: &OverlapDensity, m: f64, per_octave: usize, nodes: usize, sphere: &SphereRule) -> [f64; 3] {
    let d = q.dim;
    let eta = q.eta;
    let rho_min = 1e-4 * q.scale();
    let octaves = (eta / rho_min).log2().ceil().max(1.0) as usize;
    let panels = octaves * per_octave;
    let ratio = (eta / rho_min).powf(1.0 / panels as f64);
    let gl = GaussLegendre::new(nodes);
    let mut base = Vec::with_capacity(panels + 2);
    base.push(0.0);
    let mut b = rho_min;
    for _ in 0..panels {
        base.push(b);
        b *= ratio;
    }
    base.push(eta);
    let mut acc = [0.0; 3];
    let mut z = alloc::vec![0.0; d];
    let mut breaks = Vec::with_capacity(base.len() + 8);
    let mut kinks = Vec::with_capacity(8);
    for (theta, ws) in sphere.iter() {
        kinks.clear();
        q.ray_kinks(theta, &mut kinks);
        breaks.clear();
        breaks.extend_from_slice(&base);
        breaks.extend(kinks.iter().copied().filter(|&r| r < eta));
        breaks.sort_unstable_by(|a, b| a.total_cmp(b));
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            for (rho, wr) in gl.mapped(w[0], w[1]) {
                let jac = rho.powi(d as i32 - 1) * wr * ws;
                for i in 0..d {
                    z[i] = rho * theta[i];
                }
                let (f, bk) = (q.fwd(&z), q.bwd(&z));
                acc[0] += jac * f;
                acc[1] += jac * bk;
                acc[2] += jac * rho.powf(m) * (f + bk);
            }
        }
    }
    acc
}

/// Masses and `m`-th moment of the overlap measures. Deterministic polar
/// quadrature around the origin for `d <= 3` (error estimate from halving the
/// radial and angular resolution); importance-sampled Monte Carlo from the
/// radial law of `nu0` otherwise.
pub fn jump_overlap_integrals(
    model: &dyn ModelSpec,
    spec: &JumpOverlapSpec,
    m: f64,
    quad: OverlapQuadrature,
) -> Result<OverlapIntegrals> {
    if !(0.0..=1.0).contains(&m) {
        return Err(domain("m", m));
    }
    let q = OverlapDensity::new(model, spec)?;
    let d = q.dim;
    if d <= 3 {
        let fine = SphereRule::deterministic(d, quad.sphere_level);
        let coarse = SphereRule::deterministic(d, (quad.sphere_level / 2).max(1));
        let a = polar_overlap(&q, m, quad.panels_per_octave, quad.radial_nodes, &fine);
        let b = polar_overlap(&q, m, quad.panels_per_octave.div_ceil(2), quad.radial_nodes, &coarse);
        let err = (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max);
        return Ok(OverlapIntegrals { mass_fwd: a[0], mass_bwd: a[1], moment_m: a[2], error_estimate: err, monte_carlo: false });
    }
    // Monte Carlo: z = rho * theta with rho from the nu0 radial law on
    // [rho_min, eta]; the ball below rho_min is bounded by its sup times volume.
    let rho_min = 1e-3 * q.scale();
    let alpha = q.alpha;
    let total = q.c * sphere_area(d) * (rho_min.powf(-alpha) - spec.eta.powf(-alpha)) / alpha;
    let mut rng = RngStream::for_path(quad.seed, lane::AUX, 0);
    let mut theta = alloc::vec![0.0; d];
    let mut z = alloc::vec![0.0; d];
    let n = quad.mc_samples.max(2);
    let (mut sf, mut sb, mut sm) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (lo, hi) = (rho_min.powf(-alpha), spec.eta.powf(-alpha));
    for _ in 0..n {
        let u = rng.open01();
        let rho = (lo - u * (lo - hi)).powf(-1.0 / alpha);
        rng.unit_vector(&mut theta);
        for i in 0..d {
            z[i] = rho * theta[i];
        }
        let nu = q.nu0_radius(rho);
        let (f, b) = (q.fwd(&z) / nu, q.bwd(&z) / nu);
        sf.push(total * f);
        sb.push(total * b);
        sm.push(total * rho.powf(m) * (f + b));
    }
    let err = std_error(&sf).max(std_error(&sb)).max(std_error(&sm));
    Ok(OverlapIntegrals { mass_fwd: mean(&sf), mass_bwd: mean(&sb), moment_m: mean(&sm), error_estimate: err, monte_carlo: true })
}

// ---------------------------------------------------------------------------
// empirical W1 contraction

#[derive(Clone, Debug)]
pub struct ContractionFit {
    pub times: Vec<f64>,
    pub w1: Vec<f64>,
    /// Same-law W1 between two independent ensembles from `x`.
    pub baseline: Vec<f64>,
    pub rate: f64,
    pub rate_ci: (f64, f64),
    pub used: usize,
    /// Signal never exceeded the baseline (or too few points to fit).
    pub flagged: bool,
}

fn empirical_w1(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    if a.dim == 1 {
        Ok(w1_sorted_samples(&a.points, &b.points))
    } else {
        Ok(w1_assignment(&a.to_measure()?, &b.to_measure()?)?.value)
    }
}

/// Evolve independent ensembles from `x` and `y` (and a second one from `x`
/// for the same-law baseline), measure W1 on `times`, and fit
/// `log(W1 - baseline)` against `t` over `t <= t_fit_max`.
pub fn w1_contraction_probe(
    model: &dyn ModelSpec,
    x: &[f64],
    y: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    seed: u64,
    t_fit_max: f64,
) -> Result<ContractionFit> {
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return usage("start points must match the model dimension");
    }
    let ex = simulate_snapshots(model, cfg, &InitialCondition::Point(x.to_vec()), seed, times)?;
    let ey = simulate_snapshots(model, cfg, &InitialCondition::Point(y.to_vec()), seed.wrapping_add(0x9e37_79b9), times)?;
    let eb = simulate_snapshots(model, cfg, &InitialCondition::Point(x.to_vec()), seed.wrapping_add(0x7f4a_7c15), times)?;
    let mut w1 = Vec::with_capacity(times.len());
    let mut base = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        w1.push(empirical_w1(&ex[k], &ey[k])?);
        base.push(empirical_w1(&ex[k], &eb[k])?);
    }
    let (mut tf, mut vf) = (Vec::new(), Vec::new());
    for k in 0..times.len() {
        let excess = w1[k] - base[k];
        if times[k] <= t_fit_max && excess > 0.0 {
            tf.push(times[k]);
            vf.push(excess);
        }
    }
    let fit = if tf.len() >= 3 { fit_decay(&tf, &vf, 0.95) } else { None };
    Ok(match fit {
        Some(f) => ContractionFit {
            times: times.to_vec(),
            w1,
            baseline: base,
            rate: f.rate,
            rate_ci: f.ci,
            used: f.used,
            flagged: false,
        },
        None => ContractionFit {
            times: times.to_vec(),
            w1,
            baseline: base,
            rate: f64::NAN,
            rate_ci: (f64::NAN, f64::NAN),
            used: tf.len(),
            flagged: true,
        },
    })
}

// ---------------------------------------------------------------------------
// explicit stable contraction constants

/// Inputs of the stable contraction formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableRateConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub l0: f64,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableRate {
    pub c: f64,
    pub lambda: f64,
    pub m: f64,
    pub g1: f64,
    pub g2: f64,
}

/// `g1(r) = int_0^r 1/rho`, `g2(r) = int_0^r Phi1/(s rho)` with
/// `rho(s) = K3^{-1} s^{-1} (s ^ kappa)^{2-alpha}`, `Phi1(s) = K1 s^{2-alpha}`.
pub fn stable_rate_integrals(k: &StableRateConstants, alpha: f64, r: f64) -> (f64, f64) {
    let inv_rho = |s: f64| k.k3 * s * s.min(k.kappa).powf(alpha - 2.0);
    let breaks: Vec<f64> = if r > k.kappa { alloc::vec![0.0, k.kappa, r] } else { alloc::vec![0.0, r] };
    let cfg = Adaptive { abs_tol: 0.0, rel_tol: 1e-12, max_panels: 4000 };
    let (g1, _) = adaptive(inv_rho, &breaks, cfg);
    let (g2, _) = adaptive(|s| k.k1 * s.powf(2.0 - alpha) * inv_rho(s) / s, &breaks, cfg);
    (g1, g2)
}

/// `C = (1+m)/m`, `lambda = m / (1 + exp(m g1(2 l0) + 2 g2(2 l0)))` with
/// `m = (2 K2) ^ g1(2 l0)^{-1}`.
pub fn stable_rate_formula(k: &StableRateConstants, alpha: StabilityIndex) -> Result<StableRate> {
    for (name, v) in [("K1", k.k1), ("K2", k.k2), ("K3", k.k3), ("l0", k.l0), ("kappa", k.kappa)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveConstant(name));
        }
    }
    let (g1, g2) = stable_rate_integrals(k, alpha.value(), 2.0 * k.l0);
    let m = (2.0 * k.k2).min(1.0 / g1);
    let lambda = m / (1.0 + (m * g1 + 2.0 * g2).exp());
    Ok(StableRate { c: (1.0 + m) / m, lambda, m, g1, g2 })
}

/// Derive one admissible set of constants from the dissipativity parameters:
/// `l0 = sqrt(2 c1 / c0)` and `K2 = c0/2 - sigma_lip (A2 + K_A (l0 ^ kappa)^{1-alpha})`
/// make the far branch hold; the near branch uses the drift Lipschitz bound
/// `c3`. `K_A` and `K3` come from overlap integrals with `sigma = I` on a
/// dyadic sweep of `|x - y|` in `(0, kappa]`, `kappa = eta / (4 c2^2)`.
/// `sigma_lip` is the Lipschitz constant of the diffusion (0 for additive noise).
pub fn derive_stable_constants(
    theta: &ParamTuple,
    d: usize,
    alpha: StabilityIndex,
    eta: f64,
    sigma_lip: f64,
    quad: OverlapQuadrature,
) -> Result<StableRateConstants> {
    let a = alpha.value();
    if a >= 2.0 {
        return usage("stable constants need alpha < 2");
    }
    let kappa = eta / (4.0 * theta.c2 * theta.c2);
    let l0 = if theta.c1 > 0.0 { (2.0 * theta.c1 / theta.c0).sqrt() } else { kappa };
    let id = IdentityNoise { dim: d };
    let mut ka: f64 = 0.0;
    let mut k3_inv = f64::INFINITY;
    for j in 0..=8 {
        let r = kappa * 0.5f64.powi(j);
        let mut x = alloc::vec![0.0; d];
        x[0] = r;
        let spec = JumpOverlapSpec { eta, kappa_cap: kappa, alpha, x, y: alloc::vec![0.0; d] };
        let ov = jump_overlap_integrals(&id, &spec, 1.0, quad)?;
        let a1 = theta.c2 * ov.mass_fwd * r.min(kappa) + (1.0 + 0.5 * theta.c2 * theta.c2) * ov.moment_m;
        ka = ka.max(a1 / r.min(kappa).powf(1.0 - a));
        k3_inv = k3_inv.min(0.5 * r.powf(a) * ov.mass_fwd);
    }
    let c = levy_constant(d, a)? * sphere_area(d);
    let a2 = c / (a - 1.0) + 0.5 * theta.c3 * c / (2.0 - a);
    let k2 = 0.5 * theta.c0 - sigma_lip * (a2 + ka * l0.min(kappa).powf(1.0 - a));
    if !(k2 > 0.0) {
        return Err(Error::NonPositiveConstant("K2"));
    }
    let k1 = (theta.c3 + a2 * sigma_lip) * l0.powf(a - 1.0) + ka * sigma_lip * (l0 / kappa).powf(a - 1.0).max(1.0);
    Ok(StableRateConstants { k1, k2, k3: 1.0 / k3_inv, l0, kappa })
}

/// One admissible `(C, lambda)` valid across `alpha_window`: the worst case
/// over the window's endpoints and midpoint.
pub fn stable_rate_for_window(
    theta: &ParamTuple,
    d: usize,
    alpha_window: (f64, f64),
    eta: f64,
    sigma_lip: f64,
    quad: OverlapQuadrature,
) -> Result<StableRate> {
    let (lo, hi) = alpha_window;
    if !(lo <= hi) {
        return usage("alpha window must be ordered");
    }
    let mut worst: Option<StableRate> = None;
    for a in [lo, 0.5 * (lo + hi), hi] {
        let alpha = StabilityIndex::new(a)?;
        let k = derive_stable_constants(theta, d, alpha, eta, sigma_lip, quad)?;
        let r = stable_rate_formula(&k, alpha)?;
        worst = Some(match worst {
            None => r,
            Some(w) => StableRate {
                c: w.c.max(r.c),
                lambda: w.lambda.min(r.lambda),
                m: w.m.min(r.m),
                g1: w.g1.max(r.g1),
                g2: w.g2.max(r.g2),
            },
        });
    }
    Ok(worst.unwrap())
}

struct IdentityNoise {
    dim: usize,
}

impl ModelSpec for IdentityNoise {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        crate::sde::identity_into(self.dim, out);
    }
    fn id(&self) -> String {
        String::from("identity-noise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{MultiplicativeOu, OrnsteinUhlenbeck};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn kappa_closed_forms() {
        let k = KappaSpec::new(2.0, 0.5).unwrap();
        assert_relative_eq!(k.r0(), 0.25);
        assert!(k.kappa(0.2) < 0.0 && k.kappa(0.3) > 0.0);
        let k = KappaSpec::new(1.0, 4.0).unwrap();
        assert_relative_eq!(k.r0(), 2.0);
        assert_relative_eq!(k.kappa(2.0), 0.0, epsilon = 1e-15);
        // negative-part integral against adaptive quadrature
        let (v, _) = adaptive(|s| (-k.r_kappa(s)).max(0.0), &[0.0, 1.0, 2.0], Adaptive::default());
        assert_relative_eq!(k.negative_part_integral(3.0), v, max_relative = 1e-10);
        assert!(KappaSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn c1_zero_closed_form() {
        let (c0, s0) = (2.0, 0.7);
        let p = build_psi(KappaSpec::new(c0, 0.0).unwrap(), s0, PsiGridConfig::default()).unwrap();
        assert_eq!(p.r0, 0.0);
        assert_relative_eq!(p.r1, s0 * (8.0 / c0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(p.i1, p.r1 * p.r1 / 2.0, max_relative = 1e-10);
        assert_relative_eq!(p.lambda_displayed, c0 / 2.0, max_relative = 1e-9);
        assert_relative_eq!(p.lambda, c0 / 4.0, max_relative = 1e-9);
        assert_relative_eq!(p.big_phi(1.3), 1.3, max_relative = 1e-12);
        // Psi(r1) = 5 r1 / 6 and slope 1/2 beyond
        assert_relative_eq!(p.psi(p.r1), 5.0 * p.r1 / 6.0, max_relative = 1e-10);
        assert_relative_eq!(p.psi(p.r1 + 2.0) - p.psi(p.r1), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn displayed_rate_violates_inequality_beyond_r1() {
        // residual with the displayed rate is c0 r1 / 6 > 0 for every r > r1
        let (c0, s0) = (2.0, 1.0);
        let p = build_psi(KappaSpec::new(c0, 0.0).unwrap(), s0, PsiGridConfig::default()).unwrap();
        for r in [1.01 * p.r1, 2.0 * p.r1, 10.0 * p.r1] {
            assert_relative_eq!(p.residual(r, p.lambda_displayed), c0 * p.r1 / 6.0, max_relative = 1e-8);
            assert!(p.residual(r, p.lambda) <= 1e-12);
        }
        assert!(p.verify(p.lambda_displayed, &PsiGridConfig::default()).is_err());
    }

    #[test]
    fn psi_at_origin() {
        let p = build_psi(KappaSpec::new(1.0, 3.0).unwrap(), 0.5, PsiGridConfig::default()).unwrap();
        assert_eq!(p.psi(0.0), 0.0);
        assert_relative_eq!(p.psi_prime(0.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(p.g(0.0), 1.0);
        assert_relative_eq!(p.g(p.r1), 0.5, max_relative = 1e-12);
        assert!(p.r1 >= p.r0);
    }

    #[test]
    fn interpolation_matches_direct_quadrature() {
        let p = build_psi(KappaSpec::new(1.5, 2.0).unwrap(), 0.6, PsiGridConfig::default()).unwrap();
        let r = 0.37 * p.r1;
        let (want, _) = adaptive(|s| p.phi(s), &[0.0, p.r0.min(r), r], Adaptive::default());
        assert_relative_eq!(p.big_phi(r), want, max_relative = 1e-9);
        let (want, _) = adaptive(|s| p.psi_prime(s), &[0.0, p.r0.min(r), r], Adaptive::default());
        assert_relative_eq!(p.psi(r), want, max_relative = 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn psi_properties_hold(c0 in 0.2f64..5.0, c1 in 0.0f64..5.0, s0 in 0.1f64..2.0) {
            let p = build_psi(KappaSpec::new(c0, c1).unwrap(), s0, PsiGridConfig::default());
            prop_assert!(p.is_ok(), "{:?}", p.err());
            let p = p.unwrap();
            prop_assert!(p.lambda > 0.0);
            prop_assert!(p.r1 >= p.r0);
        }
    }

    fn ou(d: usize) -> OrnsteinUhlenbeck {
        OrnsteinUhlenbeck::new(d)
    }

    fn brownian_cfg(n: usize, t_end: f64) -> IntegratorConfig {
        IntegratorConfig::new(0.01, t_end, n, NoiseKind::Brownian)
    }

    #[test]
    fn coupled_from_equal_points() {
        let cfg = brownian_cfg(50, 1.0);
        let run = reflection_coupling_simulate(&ou(2), 0.5, &[1.0, 1.0], &[1.0, 1.0], &cfg, 3, &[0.0, 0.5, 1.0]).unwrap();
        assert!(run.mean_distance.iter().all(|&v| v == 0.0));
        assert!(run.coupling_times.iter().all(|&t| t == 0.0));
        assert_eq!(run.y.points, run.ytilde.points);
    }

    #[test]
    fn reflection_ou_decays_like_exact_mean() {
        // 1-D OU, sigma = sigma0 = 1: pure reflection, E|Z_t| = |x - y| e^{-t}
        let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
        let cfg = brownian_cfg(10_000, 2.0);
        let run = reflection_coupling_simulate(&ou(1), 1.0, &[2.0], &[0.0], &cfg, 11, &times).unwrap();
        for w in 0..times.len() - 1 {
            let tol = 3.0 * (run.distance_se[w].powi(2) + run.distance_se[w + 1].powi(2)).sqrt();
            assert!(run.mean_distance[w + 1] <= run.mean_distance[w] + tol, "{w}");
        }
        for k in 0..times.len() {
            let want = 2.0 * (-times[k]).exp();
            assert!((run.mean_distance[k] - want).abs() < 4.0 * run.distance_se[k] + 0.02 * want, "{k}");
        }
        let fit = coupled_decay_rate(&run, 2.0, 100).unwrap();
        let psi = build_psi(KappaSpec::new(2.0, 0.0).unwrap(), 1.0, PsiGridConfig::default()).unwrap();
        assert!(fit.rate >= psi.lambda - 3.0 * fit.rate_se, "{fit:?}");
        assert!((fit.rate - 1.0).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn coupling_times_grow_with_distance() {
        let cfg = brownian_cfg(2000, 6.0);
        let near = reflection_coupling_simulate(&ou(1), 1.0, &[0.5], &[0.0], &cfg, 21, &[6.0]).unwrap();
        let far = reflection_coupling_simulate(&ou(1), 1.0, &[2.0], &[0.0], &cfg, 22, &[6.0]).unwrap();
        let (_, p) = crate::stats::mann_whitney_greater(&far.coupling_times, &near.coupling_times);
        assert!(p < 0.05, "{p}");
    }

    #[test]
    fn reflection_rejects_bad_sigma0() {
        let cfg = brownian_cfg(4, 0.1);
        let e = reflection_coupling_simulate(&ou(1), 1.5, &[1.0], &[0.0], &cfg, 0, &[0.1]).unwrap_err();
        assert!(matches!(e, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn coupling_reproducible_and_multidim() {
        let cfg = brownian_cfg(200, 1.0);
        let m = MultiplicativeOu::new(2, 1.0);
        let a = reflection_coupling_simulate(&m, 0.5, &[1.0, -1.0], &[0.0, 0.5], &cfg, 5, &[0.5, 1.0]).unwrap();
        let b = reflection_coupling_simulate(&m, 0.5, &[1.0, -1.0], &[0.0, 0.5], &cfg, 5, &[0.5, 1.0]).unwrap();
        assert_eq!(a.mean_distance, b.mean_distance);
        assert!(a.mean_distance[1] < a.mean_distance[0] + 3.0 * a.distance_se[0]);
    }

    fn overlap_spec(d: usize, r: f64, alpha: f64) -> JumpOverlapSpec {
        let mut x = alloc::vec![0.0; d];
        x[0] = r;
        JumpOverlapSpec { eta: 1.0, kappa_cap: 1.0, alpha: StabilityIndex::new(alpha).unwrap(), x, y: alloc::vec![0.0; d] }
    }

    #[test]
    fn overlap_mass_closed_form_1d() {
        // sigma = I, d = 1: mass_fwd = (2c/alpha)((r/2)^{-alpha} - eta^{-alpha})
        let alpha = 1.5;
        let c = levy_constant(1, alpha).unwrap();
        for r in [0.5, 0.125, 1.0 / 64.0] {
            let ov = jump_overlap_integrals(&ou(1), &overlap_spec(1, r, alpha), 0.0, OverlapQuadrature::for_dim(1)).unwrap();
            let want = 2.0 * c / alpha * ((r / 2.0).powf(-alpha) - 1.0);
            assert_relative_eq!(ov.mass_fwd, want, max_relative = 1e-10);
            assert_relative_eq!(ov.mass_bwd, want, max_relative = 1e-10);
            assert!((ov.mass_fwd - want).abs() <= 10.0 * ov.error_estimate + 1e-9 * want);
        }
    }

    #[test]
    fn overlap_density_tends_to_nu0() {
        let z = [0.3, -0.2];
        let q = OverlapDensity::new(&ou(2), &overlap_spec(2, 1e-9, 1.5)).unwrap();
        assert_relative_eq!(q.fwd(&z), q.nu0(&z), max_relative = 1e-7);
        assert_relative_eq!(q.bwd(&z), q.nu0(&z), max_relative = 1e-7);
    }

    #[test]
    fn overlap_symmetry_under_swap() {
        let m = MultiplicativeOu::new(2, 1.0);
        let s = JumpOverlapSpec {
            eta: 1.0,
            kappa_cap: 0.5,
            alpha: StabilityIndex::new(1.6).unwrap(),
            x: alloc::vec![0.3, 0.1],
            y: alloc::vec![0.1, -0.05],
        };
        let mut t = s.clone();
        core::mem::swap(&mut t.x, &mut t.y);
        let quad = OverlapQuadrature { sphere_level: 128, ..OverlapQuadrature::for_dim(2) };
        let a = jump_overlap_integrals(&m, &s, 0.5, quad).unwrap();
        let b = jump_overlap_integrals(&m, &t, 0.5, quad).unwrap();
        assert_relative_eq!(a.mass_fwd, b.mass_bwd, max_relative = 1e-10);
        assert_relative_eq!(a.mass_bwd, b.mass_fwd, max_relative = 1e-10);
        assert_relative_eq!(a.moment_m, b.moment_m, max_relative = 1e-10);
    }

    #[test]
    fn overlap_scaling_band_2d() {
        let alpha = 1.5;
        let mut scaled = Vec::new();
        for k in 1..=6 {
            let r = 0.5f64.powi(k);
            let ov = jump_overlap_integrals(&ou(2), &overlap_spec(2, r, alpha), 0.0, OverlapQuadrature::for_dim(2)).unwrap();
            assert!(ov.error_estimate < 1e-2 * ov.mass());
            scaled.push(ov.mass() * r.powf(alpha));
        }
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(lo > 0.0 && hi / lo < 2.0, "{scaled:?}");
    }

    #[test]
    fn overlap_monte_carlo_agrees_in_3d() {
        let s = overlap_spec(3, 0.25, 1.7);
        let det = jump_overlap_integrals(&ou(3), &s, 1.0, OverlapQuadrature::for_dim(3)).unwrap();
        // same integral through the Monte Carlo path via a 4-d embedding is not
        // comparable, so check the 3-d polar result against its own halving
        assert!(det.error_estimate < 2e-2 * det.mass(), "{det:?}");
        assert_relative_eq!(det.mass_fwd, det.mass_bwd, max_relative = 1e-9);
    }

    #[test]
    fn overlap_rejects_equal_points_and_bad_m() {
        let s = overlap_spec(1, 0.0, 1.5);
        assert!(jump_overlap_integrals(&ou(1), &s, 0.0, OverlapQuadrature::for_dim(1)).is_err());
        let s = overlap_spec(1, 0.1, 1.5);
        assert!(jump_overlap_integrals(&ou(1), &s, 1.5, OverlapQuadrature::for_dim(1)).is_err());
    }

    #[test]
    fn w1_probe_same_start_within_baseline() {
        let cfg = IntegratorConfig::new(0.01, 2.0, 1000, NoiseKind::Brownian);
        let times = [0.5, 1.0, 1.5, 2.0];
        let f = w1_contraction_probe(&ou(1), &[1.0], &[1.0], &times, &cfg, 1, 2.0).unwrap();
        for k in 0..times.len() {
            assert!(f.w1[k] < 3.0 * f.baseline[k] + 0.05, "{f:?}");
        }
    }

    #[test]
    fn w1_probe_recovers_unit_rate() {
        let times: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
        for noise in [NoiseKind::Brownian, NoiseKind::stable(1.5).unwrap()] {
            let cfg = IntegratorConfig::new(0.01, 3.0, 4000, noise);
            let f = w1_contraction_probe(&ou(1), &[4.0], &[0.0], &times, &cfg, 2, 3.0).unwrap();
            assert!(!f.flagged);
            assert!(f.rate_ci.1 > 0.0);
            assert!((f.rate - 1.0).abs() < 0.25, "{noise:?} {f:?}");
        }
    }

    #[test]
    fn stable_formula_structure_and_monotonicity() {
        let alpha = StabilityIndex::new(1.5).unwrap();
        let base = StableRateConstants { k1: 1.0, k2: 0.5, k3: 2.0, l0: 0.5, kappa: 0.25 };
        let mut prev = f64::INFINITY;
        for l0 in [0.1, 0.2, 0.5, 1.0, 2.0] {
            let r = stable_rate_formula(&StableRateConstants { l0, ..base }, alpha).unwrap();
            assert!(r.lambda > 0.0 && r.c > 1.0);
            assert!(r.lambda < prev);
            prev = r.lambda;
        }
        assert!(matches!(
            stable_rate_formula(&StableRateConstants { k2: 0.0, ..base }, alpha),
            Err(Error::NonPositiveConstant("K2"))
        ));
    }

    #[test]
    fn stable_integrals_closed_form() {
        let k = StableRateConstants { k1: 1.3, k2: 0.5, k3: 2.0, l0: 0.5, kappa: 0.25 };
        let a = 1.5;
        let r = 1.0;
        let (g1, g2) = stable_rate_integrals(&k, a, r);
        let g1_want = k.k3 * (k.kappa.powf(a) / a + k.kappa.powf(a - 2.0) * (r * r - k.kappa * k.kappa) / 2.0);
        let g2_want = k.k1 * k.k3 * (k.kappa + k.kappa.powf(a - 2.0) * (r.powf(3.0 - a) - k.kappa.powf(3.0 - a)) / (3.0 - a));
        assert_relative_eq!(g1, g1_want, max_relative = 1e-10);
        assert_relative_eq!(g2, g2_want, max_relative = 1e-10);
    }

    #[test]
    fn derived_constants_for_ou() {
        let theta = ParamTuple::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let r = stable_rate_for_window(&theta, 1, (1.4, 1.6), 1.0, 0.0, OverlapQuadrature::for_dim(1)).unwrap();
        assert!(r.lambda > 0.0 && r.c > 1.0);
        assert!(r.lambda <= 1.0);
    }
}
