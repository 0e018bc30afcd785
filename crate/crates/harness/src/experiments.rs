//! The five experiment kinds. Each returns cell records, rate fits and named
//! checks; nothing here touches the filesystem.
//!
//! Seeds: every ensemble seed is derived from the experiment seed and a tuple
//! of small integers naming its role, so cells can be rerun in isolation.

use rayon::prelude::*;
use stabrate_core::coupling::{
    build_psi, coupled_decay_rate, stable_rate_for_window, w1_contraction_probe, KappaSpec, OverlapQuadrature,
    PsiGridConfig,
};
use stabrate_core::generator::{
    generator_gap_stable_vs_brownian, generator_gap_stable_vs_stable, Affine, PlaneWave, QuadratureConfig,
};
use stabrate_core::oracle::{ou_euler_marginal, ou_marginal, ou_stationary, StableLaw};
use stabrate_core::rng::{lane, RngStream};
use stabrate_core::sde::{
    check_dissipativity, invariant_from_snapshots, DissipativityKind, Ensemble, InitialCondition, IntegratorConfig,
    ModelSpec, NoiseKind, ProbeSpec,
};
use stabrate_core::stable::StabilityIndex;
use stabrate_core::stats::{ks_two_sample, mann_whitney_greater, mean, std_error};
use stabrate_core::wasserstein::{
    bootstrap_ci, w1_assignment, w1_cdf_integral, w1_sorted_1d, w1_sorted_samples, EmpiricalMeasure, Resampling,
};

use crate::config::{ExperimentConfig, ExperimentId};
use crate::error::Result;
use crate::fit::{AbscissaKind, RateFit, RatePoint};
use crate::parallel::{reflection_coupling_par, simulate_snapshots_par};
use crate::registry::{build_model, has_oracle};

/// Acceptance window for fitted log–log slopes.
pub const SLOPE_WINDOW: (f64, f64) = (0.7, 1.3);
pub const FIT_LEVEL: f64 = 0.95;
const BOOTSTRAP_RESAMPLES: usize = 200;
/// Paths used by the burn-in diagnostic.
const DIAGNOSTIC_PATHS: usize = 8192;
const CDF_TAIL_CUT: f64 = 40.0;
const CDF_TOL: f64 = 1e-9;
/// Smallest p-value accepted by same-law checks.
const SAME_LAW_P: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleTag {
    ExactCdf,
    MonteCarlo,
}

impl OracleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleTag::ExactCdf => "exact-cdf",
            OracleTag::MonteCarlo => "monte-carlo",
        }
    }
}

/// One measured quantity of an experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub kind: &'static str,
    pub d: usize,
    pub alpha: f64,
    pub vartheta: Option<f64>,
    pub t: Option<f64>,
    pub abscissa: f64,
    pub value: f64,
    pub stderr: Option<f64>,
    pub baseline: Option<f64>,
    pub oracle: OracleTag,
    pub converged: bool,
    pub note: String,
}

impl CellRecord {
    pub fn new(kind: &'static str, d: usize, alpha: f64, abscissa: f64, value: f64, oracle: OracleTag) -> Self {
        Self {
            kind,
            d,
            alpha,
            vartheta: None,
            t: None,
            abscissa,
            value,
            stderr: None,
            baseline: None,
            oracle,
            converged: true,
            note: String::new(),
        }
    }

    fn vartheta(mut self, v: f64) -> Self {
        self.vartheta = Some(v);
        self
    }

    fn at(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    fn se(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    fn baseline(mut self, b: f64) -> Self {
        self.baseline = Some(b);
        self
    }

    fn converged(mut self, ok: bool) -> Self {
        self.converged = ok;
        self
    }

    fn note(mut self, n: impl Into<String>) -> Self {
        self.note = n.into();
        self
    }

    fn rate_point(&self) -> RatePoint {
        RatePoint { abscissa: self.abscissa, w1: self.value, stderr: self.stderr.unwrap_or(0.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Process exit codes of the CLI.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CHECK_FAILED: i32 = 2;
    pub const CELL_FAILURE: i32 = 3;
    pub const CONFIG_ERROR: i32 = 4;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub id: ExperimentId,
    pub cells: Vec<CellRecord>,
    pub fits: Vec<RateFit>,
    pub checks: Vec<Check>,
    /// Fits that could not be made because fewer than four usable cells survived.
    pub missing_fits: Vec<String>,
    /// Parts of the grid that were skipped, with the reason.
    pub skipped: Vec<String>,
}

impl ExperimentResult {
    pub fn empty(id: ExperimentId) -> Self {
        Self { id, cells: Vec::new(), fits: Vec::new(), checks: Vec::new(), missing_fits: Vec::new(), skipped: Vec::new() }
    }

    pub fn exit_code(&self) -> i32 {
        if self.cells.is_empty() || !self.missing_fits.is_empty() {
            exit::CELL_FAILURE
        } else if self.checks.iter().any(|c| !c.passed) {
            exit::CHECK_FAILED
        } else {
            exit::SUCCESS
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn fit(&self, label: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.label == label)
    }

    pub fn cells_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a CellRecord> + 'a {
        self.cells.iter().filter(move |c| c.kind == kind)
    }

    /// Fit `log value` against `log abscissa` over converged cells of `kind`
    /// selected by `keep`, recording a missing fit when too few survive.
    fn fit_cells(
        &mut self,
        label: String,
        kind: &str,
        keep: impl Fn(&CellRecord) -> bool,
        abscissa: AbscissaKind,
        subtracted: bool,
    ) -> Option<RateFit> {
        let pts: Vec<RatePoint> = self
            .cells
            .iter()
            .filter(|c| c.kind == kind && c.converged && keep(c))
            .map(CellRecord::rate_point)
            .collect();
        match RateFit::fit(&label, abscissa, &pts, subtracted, FIT_LEVEL) {
            Some(f) => {
                self.fits.push(f.clone());
                Some(f)
            }
            None => {
                self.missing_fits.push(label);
                None
            }
        }
    }

    fn slope_check(&mut self, name: String, fit: Option<&RateFit>) {
        let (lo, hi) = SLOPE_WINDOW;
        let check = match fit {
            Some(f) => Check::new(
                name,
                f.slope_ci_within(lo, hi),
                format!("slope {:.4}, CI [{:.4}, {:.4}] vs [{lo}, {hi}]", f.slope, f.slope_ci.0, f.slope_ci.1),
            ),
            None => Check::new(name, false, "fewer than four usable cells"),
        };
        self.checks.push(check);
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.experiment.id {
        ExperimentId::RateVsBrownian => rate_vs_brownian(cfg),
        ExperimentId::RateStableStable => rate_stable_stable(cfg),
        ExperimentId::FiniteTimeUniformity => finite_time_uniformity(cfg),
        ExperimentId::CouplingRates => coupling_rates(cfg),
        ExperimentId::GeneratorChecks => generator_checks(cfg),
    }
}

// ---------------------------------------------------------------------------
// shared machinery

/// Seed for the ensemble named by `role` (splitmix64 over the parts).
pub fn derive_seed(seed: u64, role: &[u64]) -> u64 {
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for &p in role {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

// Role tags.
const ROLE_CRN: u64 = 1;
const ROLE_BASELINE: u64 = 2;
const ROLE_SAME_LAW: u64 = 3;
const ROLE_INDEP: u64 = 4;
const ROLE_BOOTSTRAP: u64 = 5;
const ROLE_PROBES: u64 = 6;
const ROLE_COUPLING: u64 = 7;

fn alpha_key(a: f64) -> u64 {
    (a * 1e6).round() as u64
}

fn start(d: usize, x0: f64) -> Vec<f64> {
    let mut p = vec![0.0; d];
    p[0] = x0;
    p
}

fn stable(alpha: f64) -> Result<NoiseKind> {
    Ok(NoiseKind::stable(alpha)?)
}

/// Ensembles of `n` paths at `times` (which end at the run's horizon).
fn simulate(
    model: &dyn ModelSpec,
    cfg: &ExperimentConfig,
    noise: NoiseKind,
    init: &InitialCondition,
    n: usize,
    seed: u64,
    times: &[f64],
) -> Result<Vec<Ensemble>> {
    let t_end = times.last().copied().unwrap_or(cfg.mc.t_end);
    let ic = IntegratorConfig::new(cfg.mc.dt, t_end, n, noise);
    simulate_snapshots_par(model, &ic, init, seed, times, cfg.mc.block)
}

/// Reporting times for a stationary run: the burn-in snapshot (when it
/// precedes the horizon) and the terminal one.
fn stationary_times(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.mc.burn_in > 0.0 && cfg.mc.burn_in < cfg.mc.t_end {
        vec![cfg.mc.burn_in, cfg.mc.t_end]
    } else {
        vec![cfg.mc.t_end]
    }
}

fn head(e: &Ensemble, n: usize) -> Ensemble {
    let mut h = e.clone();
    h.points.truncate(n.min(e.len()) * e.dim);
    h
}

/// Burn-in diagnostic on the first paths of a stationary run; `true` when no
/// burn-in snapshot was recorded.
fn burn_in_converged(snaps: &[Ensemble], seed: u64) -> Result<bool> {
    if snaps.len() < 2 {
        return Ok(true);
    }
    let est = invariant_from_snapshots(head(&snaps[0], DIAGNOSTIC_PATHS), head(&snaps[1], DIAGNOSTIC_PATHS), seed)?;
    Ok(est.converged)
}

/// Empirical W1 on the first `n` rows: sorted in one dimension (where it
/// equals the assignment value), assignment otherwise.
fn w1_rows(a: &Ensemble, b: &Ensemble, n: usize) -> Result<f64> {
    let n = n.min(a.len()).min(b.len());
    if a.dim == 1 {
        return Ok(w1_sorted_samples(&a.points[..n], &b.points[..n]));
    }
    let d = a.dim;
    let ma = EmpiricalMeasure::uniform(d, a.points[..n * d].to_vec())?;
    let mb = EmpiricalMeasure::uniform(d, b.points[..n * d].to_vec())?;
    Ok(w1_assignment(&ma, &mb)?.value)
}

/// Paired-bootstrap standard error of the sorted W1 between two CRN samples.
fn paired_bootstrap_se(a: &[f64], b: &[f64], seed: u64) -> Result<f64> {
    let ma = EmpiricalMeasure::uniform(1, a.to_vec())?;
    let mb = EmpiricalMeasure::uniform(1, b.to_vec())?;
    let mut rng = RngStream::for_path(seed, lane::BOOTSTRAP, 0);
    let ci = bootstrap_ci(
        |x, y| Ok(w1_sorted_1d(x, y)?.value),
        &ma,
        &mb,
        BOOTSTRAP_RESAMPLES,
        FIT_LEVEL,
        Resampling::Paired,
        &mut rng,
    )?;
    Ok(ci.se)
}

fn cdf_w1(a: &StableLaw, b: &StableLaw) -> Result<(f64, f64)> {
    let r = w1_cdf_integral(a, b, CDF_TAIL_CUT, CDF_TOL)?;
    Ok((r.value, r.stderr.unwrap_or(0.0)))
}

fn dissipativity_check(out: &mut ExperimentResult, model: &dyn ModelSpec, kind: DissipativityKind, cfg: &ExperimentConfig) -> Result<()> {
    let d = model.dim();
    let sigma0 = (kind == DissipativityKind::Dc).then_some(cfg.coupling.sigma0);
    let probes = ProbeSpec { seed: derive_seed(cfg.experiment.seed, &[ROLE_PROBES, d as u64]), ..ProbeSpec::default() };
    let name = match kind {
        DissipativityKind::Dc => "dc",
        DissipativityKind::DcPrime => "dc_prime",
    };
    let report = check_dissipativity(model, kind, sigma0, probes);
    out.checks.push(match report {
        Ok(r) => Check::new(
            format!("{name}_d{d}"),
            r.holds(),
            format!("fitted c0 {:.4}, c1 {:.4}, {} violations in {} probes", r.c0, r.c1, r.violations.len(), r.n_probes),
        ),
        Err(e) => Check::new(format!("{name}_d{d}"), false, e.to_string()),
    });
    Ok(())
}

/// Cells of a CRN comparison in d = 1: every target law is simulated with the
/// reference's seed, so the sorted W1 pairs nearly identical paths.
struct CrnSweep {
    reference: Ensemble,
    independent_reference: Ensemble,
    /// `(alpha, w1, paired stderr, burn-in converged)`.
    cells: Vec<(f64, f64, f64, bool)>,
}

fn crn_sweep_d1(
    model: &dyn ModelSpec,
    cfg: &ExperimentConfig,
    reference: NoiseKind,
    alphas: &[f64],
    salt: u64,
) -> Result<CrnSweep> {
    let seed = cfg.experiment.seed;
    let n = cfg.mc.n_paths;
    let times = stationary_times(cfg);
    let init = InitialCondition::origin(1);
    let crn = derive_seed(seed, &[ROLE_CRN, salt]);
    let ref_snaps = simulate(model, cfg, reference, &init, n, crn, &times)?;
    let indep = simulate(model, cfg, reference, &init, n, derive_seed(seed, &[ROLE_BASELINE, salt]), &times)?;
    let reference = ref_snaps.last().unwrap().clone();
    let cells = alphas
        .par_iter()
        .map(|&a| -> Result<(f64, f64, f64, bool)> {
            let snaps = simulate(model, cfg, stable(a)?, &init, n, crn, &times)?;
            let x = snaps.last().unwrap();
            let conv = burn_in_converged(&snaps, derive_seed(seed, &[ROLE_PROBES, alpha_key(a)]))?;
            let w = w1_rows(x, &reference, usize::MAX)?;
            let se = paired_bootstrap_se(&x.points, &reference.points, derive_seed(seed, &[ROLE_BOOTSTRAP, alpha_key(a)]))?;
            Ok((a, w, se, conv))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrnSweep { reference, independent_reference: indep.last().unwrap().clone(), cells })
}

/// Baseline-subtracted W1 from independent ensembles of `min(n_paths,
/// assignment_n)` paths, averaged over replicates. Returns per alpha
/// `(alpha, mean, stderr over replicates, mean baseline)`.
fn independent_sweep(
    model: &dyn ModelSpec,
    cfg: &ExperimentConfig,
    reference: NoiseKind,
    alphas: &[f64],
    salt: u64,
) -> Result<Vec<(f64, f64, f64, f64)>> {
    let seed = cfg.experiment.seed;
    let d = model.dim();
    let n = cfg.mc.n_paths.min(cfg.mc.assignment_n);
    let init = InitialCondition::origin(d);
    let t = [cfg.mc.t_end];
    let reps: Vec<(Vec<f64>, f64)> = (0..cfg.mc.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, f64)> {
            let role = |k: u64, a: u64| derive_seed(seed, &[ROLE_INDEP, salt, d as u64, r, k, a]);
            let y = simulate(model, cfg, reference, &init, n, role(0, 0), &t)?.remove(0);
            let yb = simulate(model, cfg, reference, &init, n, role(1, 0), &t)?.remove(0);
            let base = w1_rows(&y, &yb, n)?;
            let vals = alphas
                .iter()
                .map(|&a| {
                    let x = simulate(model, cfg, stable(a)?, &init, n, role(2, alpha_key(a)), &t)?.remove(0);
                    Ok(w1_rows(&x, &y, n)? - base)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((vals, base))
        })
        .collect::<Result<Vec<_>>>()?;
    let base = mean(&reps.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let v: Vec<f64> = reps.iter().map(|r| r.0[k]).collect();
            let se = if v.len() > 1 { std_error(&v) } else { f64::NAN };
            (a, mean(&v), se, base)
        })
        .collect())
}

fn same_law_cell(
    out: &mut ExperimentResult,
    name: String,
    a: &Ensemble,
    b: &Ensemble,
    alpha: f64,
    vartheta: Option<f64>,
    baseline: f64,
) -> Result<()> {
    let w = w1_rows(a, b, usize::MAX)?;
    let (ks, p) = ks_two_sample(&a.points, &b.points);
    let mut cell = CellRecord::new("same_law", a.dim, alpha, 0.0, w, OracleTag::MonteCarlo)
        .baseline(baseline)
        .note(format!("ks {ks:.5}, p {p:.4}"));
    if let Some(v) = vartheta {
        cell = cell.vartheta(v);
    }
    out.cells.push(cell);
    out.checks.push(Check::new(name, p > SAME_LAW_P, format!("W1 {w:.5} vs baseline {baseline:.5}; KS p {p:.4}")));
    Ok(())
}

fn ratio_spread(cells: &[&CellRecord]) -> f64 {
    let r: Vec<f64> = cells.iter().filter(|c| c.abscissa > 0.0).map(|c| c.value / c.abscissa).collect();
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// `|mc - oracle| <= 3 sqrt(se^2 + bias^2)` where `bias` is the exact
/// discretization (and finite-horizon) offset of the simulated chain.
fn agreement(mc: f64, se: f64, oracle: f64, chain_oracle: f64) -> (bool, f64) {
    let combined = (se * se + (chain_oracle - oracle).powi(2)).sqrt();
    ((mc - oracle).abs() <= 3.0 * combined, combined)
}

// ---------------------------------------------------------------------------
// stable vs Brownian stationary laws

fn rate_vs_brownian(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::empty(ExperimentId::RateVsBrownian);
    let alphas: Vec<f64> = cfg.grid.alpha.iter().copied().filter(|&a| a < 2.0).collect();
    let sweep = cfg.grid.dims.len() > 1;
    let exact = has_oracle(&cfg.experiment.model);
    let brown = NoiseKind::Stable(StabilityIndex::BROWNIAN);
    let dt = cfg.mc.dt;
    for &d in &cfg.grid.dims {
        let model = build_model(&cfg.experiment.model, d)?;
        dissipativity_check(&mut out, model.as_ref(), DissipativityKind::Dc, cfg)?;
        if d == 1 {
            if exact {
                let gauss = ou_stationary(2.0)?;
                let t_end = cfg.mc.t_end;
                let chain_ref = ou_euler_marginal(2.0, 0.0, t_end, dt)?;
                for &a in &alphas {
                    let (w, err) = cdf_w1(&ou_stationary(a)?, &gauss)?;
                    out.cells.push(CellRecord::new("oracle", 1, a, 2.0 - a, w, OracleTag::ExactCdf).se(err));
                    let (wc, errc) = cdf_w1(&ou_euler_marginal(a, 0.0, t_end, dt)?, &chain_ref)?;
                    out.cells.push(
                        CellRecord::new("chain_oracle", 1, a, 2.0 - a, wc, OracleTag::ExactCdf)
                            .at(t_end)
                            .se(errc)
                            .note(format!("Euler chain from 0, dt {dt}")),
                    );
                }
            }
            let s = crn_sweep_d1(model.as_ref(), cfg, brown, &alphas, 0)?;
            let base = w1_rows(&s.reference, &s.independent_reference, usize::MAX)?;
            for &(a, w, se, conv) in &s.cells {
                out.cells.push(
                    CellRecord::new("mc_crn", 1, a, 2.0 - a, w, OracleTag::MonteCarlo)
                        .se(se)
                        .baseline(base)
                        .converged(conv)
                        .note(if conv { "" } else { "burn-in diagnostic failed" }),
                );
            }
            // plain-normal Brownian noise from the same seed: distinct draws, same law
            let init = InitialCondition::origin(1);
            let plain = simulate(
                model.as_ref(),
                cfg,
                NoiseKind::Brownian,
                &init,
                cfg.mc.n_paths,
                derive_seed(cfg.experiment.seed, &[ROLE_SAME_LAW, 0]),
                &[cfg.mc.t_end],
            )?
            .remove(0);
            same_law_cell(&mut out, "alpha2_same_law".into(), &plain, &s.reference, 2.0, None, base)?;
        }
        if d > 1 || sweep {
            let mut grid = alphas.clone();
            if !grid.contains(&2.0) {
                grid.push(2.0);
            }
            for (a, v, se, base) in independent_sweep(model.as_ref(), cfg, brown, &grid, 0)? {
                let kind = if a == 2.0 { "alpha2_indep" } else { "mc_indep" };
                out.cells.push(CellRecord::new(kind, d, a, 2.0 - a, v, OracleTag::MonteCarlo).se(se).baseline(base));
            }
        }
    }

    // fits and checks
    if exact && cfg.grid.dims.contains(&1) {
        let f = out.fit_cells("oracle d=1".into(), "oracle", |c| c.d == 1, AbscissaKind::TwoMinusAlpha, false);
        out.slope_check("oracle_slope_d1".into(), f.as_ref());
        let cells: Vec<&CellRecord> = out.cells_of("oracle").collect();
        let spread = ratio_spread(&cells);
        out.checks.push(Check::new("oracle_ratio_within_factor3_d1", spread <= 3.0, format!("max/min W1/(2-alpha) = {spread:.4}")));
        let mut worst = 0.0f64;
        let mut ok = true;
        for c in out.cells_of("mc_crn") {
            let oracle = out.cells_of("oracle").find(|o| o.alpha == c.alpha).unwrap();
            let chain = out.cells_of("chain_oracle").find(|o| o.alpha == c.alpha).unwrap();
            let (pass, comb) = agreement(c.value, c.stderr.unwrap_or(0.0), oracle.value, chain.value);
            ok &= pass;
            worst = worst.max((c.value - oracle.value).abs() / comb);
        }
        out.checks.push(Check::new("mc_agrees_with_oracle_d1", ok, format!("largest |mc - oracle| / combined stderr = {worst:.3}")));
    }
    if cfg.grid.dims.contains(&1) {
        let f = out.fit_cells("mc_crn d=1".into(), "mc_crn", |c| c.d == 1, AbscissaKind::TwoMinusAlpha, false);
        if !exact {
            out.slope_check("mc_slope_d1".into(), f.as_ref());
        }
    }
    if cfg.grid.dims.len() > 1 || cfg.grid.dims.iter().any(|&d| d > 1) {
        for &d in &cfg.grid.dims {
            out.fit_cells(format!("mc d={d}"), "mc_indep", |c| c.d == d, AbscissaKind::TwoMinusAlpha, true);
            let a2 = out.cells_of("alpha2_indep").find(|c| c.d == d).cloned();
            if let Some(c) = a2 {
                let tol = 3.0 * c.stderr.filter(|s| s.is_finite()).unwrap_or(c.baseline.unwrap_or(0.0));
                out.checks.push(Check::new(
                    format!("alpha2_within_baseline_d{d}"),
                    c.value.abs() <= tol,
                    format!("baseline-subtracted W1 {:.5}, tolerance {tol:.5}", c.value),
                ));
            }
        }
        dimension_checks(&mut out, cfg);
    }
    Ok(out)
}

/// `W1/(2 - alpha)` across dimensions at alpha = 1.9.
fn dimension_checks(out: &mut ExperimentResult, cfg: &ExperimentConfig) {
    const ALPHA: f64 = 1.9;
    let mut dims = cfg.grid.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let ratios: Vec<(usize, f64, f64)> = dims
        .iter()
        .filter_map(|&d| {
            out.cells_of("mc_indep").find(|c| c.d == d && (c.alpha - ALPHA).abs() < 1e-12).map(|c| {
                (d, c.value / (2.0 - ALPHA), c.stderr.unwrap_or(f64::NAN) / (2.0 - ALPHA))
            })
        })
        .collect();
    if ratios.len() < 2 {
        out.skipped.push("dimension trend: alpha = 1.9 needs at least two dimensions".into());
        return;
    }
    for &(d, r, se) in &ratios {
        out.cells.push(CellRecord::new("ratio_d", d, ALPHA, d as f64, r, OracleTag::MonteCarlo).se(se));
    }
    let monotone = ratios.windows(2).all(|w| w[1].1 >= w[0].1);
    let detail = ratios.iter().map(|(d, r, se)| format!("d={d}: {r:.4} ± {se:.4}")).collect::<Vec<_>>().join("; ");
    out.checks.push(Check::new("d_monotone_alpha1.9", monotone, detail));
    let (d0, r0, s0) = ratios[0];
    let envelope = ratios.iter().all(|&(d, r, se)| {
        let k = d as f64 / d0 as f64;
        let tol = 3.0 * (se * se + k * k * s0 * s0).sqrt();
        r <= k * r0 + if tol.is_finite() { tol } else { 0.0 }
    });
    out.checks.push(Check::new("d_linear_envelope_alpha1.9", envelope, "ratio(d) <= (d/d0) ratio(d0) + 3 se"));
}

// ---------------------------------------------------------------------------
// stable vs stable stationary laws

fn rate_stable_stable(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::empty(ExperimentId::RateStableStable);
    let exact = has_oracle(&cfg.experiment.model);
    if cfg.grid.vartheta.is_empty() {
        out.skipped.push("grid.vartheta is empty".into());
        return Ok(out);
    }
    for (vk, &v) in cfg.grid.vartheta.iter().enumerate() {
        let alphas: Vec<f64> = cfg.grid.alpha.iter().copied().filter(|&a| a != v).collect();
        let salt = 100 + vk as u64;
        for &d in &cfg.grid.dims {
            let model = build_model(&cfg.experiment.model, d)?;
            if vk == 0 {
                dissipativity_check(&mut out, model.as_ref(), DissipativityKind::DcPrime, cfg)?;
            }
            if d == 1 {
                if exact {
                    let target = ou_stationary(v)?;
                    let mut asym = 0.0f64;
                    for &a in &alphas {
                        let law = ou_stationary(a)?;
                        let (w, err) = cdf_w1(&law, &target)?;
                        let (ws, _) = cdf_w1(&target, &law)?;
                        asym = asym.max((w - ws).abs());
                        out.cells.push(
                            CellRecord::new("oracle", 1, a, (v - a).abs(), w, OracleTag::ExactCdf).vartheta(v).se(err),
                        );
                    }
                    out.checks.push(Check::new(
                        format!("oracle_symmetric_theta{v}"),
                        asym <= 1e-9,
                        format!("largest |W1(a,b) - W1(b,a)| = {asym:.3e}"),
                    ));
                }
                let s = crn_sweep_d1(model.as_ref(), cfg, stable(v)?, &alphas, salt)?;
                let base = w1_rows(&s.reference, &s.independent_reference, usize::MAX)?;
                for &(a, w, se, conv) in &s.cells {
                    out.cells.push(
                        CellRecord::new("mc_crn", 1, a, (v - a).abs(), w, OracleTag::MonteCarlo)
                            .vartheta(v)
                            .se(se)
                            .baseline(base)
                            .converged(conv),
                    );
                }
                same_law_cell(
                    &mut out,
                    format!("alpha_eq_theta_same_law_theta{v}"),
                    &s.independent_reference,
                    &s.reference,
                    v,
                    Some(v),
                    base,
                )?;
                symmetry_check(&mut out, model.as_ref(), cfg, &s.reference, alphas.first().copied(), v, salt)?;
            }
            if d > 1 {
                for (a, w, se, base) in independent_sweep(model.as_ref(), cfg, stable(v)?, &alphas, salt)? {
                    out.cells.push(
                        CellRecord::new("mc_indep", d, a, (v - a).abs(), w, OracleTag::MonteCarlo)
                            .vartheta(v)
                            .se(se)
                            .baseline(base),
                    );
                }
            }
        }
        let sfx = if cfg.grid.vartheta.len() > 1 { format!(" theta={v}") } else { String::new() };
        for &d in &cfg.grid.dims {
            if d == 1 && exact {
                let f = out.fit_cells(format!("oracle d=1{sfx}"), "oracle", |c| c.vartheta == Some(v), AbscissaKind::AlphaGap, false);
                out.slope_check(format!("oracle_slope_d1_theta{v}"), f.as_ref());
            }
            if d == 1 {
                let f = out.fit_cells(format!("mc_crn d=1{sfx}"), "mc_crn", |c| c.vartheta == Some(v), AbscissaKind::AlphaGap, false);
                if !exact {
                    out.slope_check(format!("mc_slope_d1_theta{v}"), f.as_ref());
                }
            } else {
                out.fit_cells(format!("mc d={d}{sfx}"), "mc_indep", |c| c.d == d && c.vartheta == Some(v), AbscissaKind::AlphaGap, true);
            }
        }
    }
    Ok(out)
}

/// Metric symmetry of the assignment estimator on a CRN pair.
fn symmetry_check(
    out: &mut ExperimentResult,
    model: &dyn ModelSpec,
    cfg: &ExperimentConfig,
    reference: &Ensemble,
    alpha: Option<f64>,
    v: f64,
    salt: u64,
) -> Result<()> {
    let Some(a) = alpha else { return Ok(()) };
    let n = 512.min(cfg.mc.n_paths);
    let init = InitialCondition::origin(model.dim());
    let x = simulate(model, cfg, stable(a)?, &init, n, derive_seed(cfg.experiment.seed, &[ROLE_CRN, salt]), &[cfg.mc.t_end])?
        .remove(0);
    let ma = EmpiricalMeasure::uniform(1, x.points.clone())?;
    let mb = EmpiricalMeasure::uniform(1, reference.points[..n].to_vec())?;
    let ab = w1_assignment(&ma, &mb)?.value;
    let ba = w1_assignment(&mb, &ma)?.value;
    out.checks.push(Check::new(
        format!("mc_symmetric_theta{v}"),
        (ab - ba).abs() <= 1e-9 * (1.0 + ab),
        format!("assignment W1 {ab:.10} vs swapped {ba:.10} on {n} paths"),
    ));
    Ok(())
}

// ---------------------------------------------------------------------------
// finite-time laws

fn finite_time_uniformity(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::empty(ExperimentId::FiniteTimeUniformity);
    let alphas: Vec<f64> = cfg.grid.alpha.iter().copied().filter(|&a| a < 2.0).collect();
    let mut times: Vec<f64> = cfg.grid.times.clone();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_last = *times.last().unwrap();
    let exact = has_oracle(&cfg.experiment.model);
    let x0 = cfg.coupling.x0;
    let dt = cfg.mc.dt;
    let seed = cfg.experiment.seed;
    let brown = NoiseKind::Stable(StabilityIndex::BROWNIAN);
    for &d in &cfg.grid.dims {
        let model = build_model(&cfg.experiment.model, d)?;
        let oracle_here = exact && d == 1;
        if oracle_here {
            for &a in &alphas {
                let mut best = 0.0f64;
                for &t in &times {
                    let w = if t == 0.0 { 0.0 } else { cdf_w1(&ou_marginal(a, x0, t)?, &ou_marginal(2.0, x0, t)?)?.0 };
                    best = best.max(w);
                    out.cells.push(CellRecord::new("oracle_t", 1, a, 2.0 - a, w, OracleTag::ExactCdf).at(t));
                    if t > 0.0 {
                        let c = cdf_w1(&ou_euler_marginal(a, x0, t, dt)?, &ou_euler_marginal(2.0, x0, t, dt)?)?.0;
                        out.cells.push(CellRecord::new("chain_oracle_t", 1, a, 2.0 - a, c, OracleTag::ExactCdf).at(t));
                    }
                }
                out.cells.push(CellRecord::new("oracle_max_t", 1, a, 2.0 - a, best, OracleTag::ExactCdf));
                let (ws, _) = cdf_w1(&ou_stationary(a)?, &ou_stationary(2.0)?)?;
                out.cells.push(CellRecord::new("oracle_stationary", 1, a, 2.0 - a, ws, OracleTag::ExactCdf));
            }
        }
        let n = cfg.mc.n_paths;
        let n_w1 = if d == 1 { n } else { n.min(cfg.mc.assignment_n) };
        let init = InitialCondition::Point(start(d, x0));
        let crn = derive_seed(seed, &[ROLE_CRN, 200, d as u64]);
        let reference = simulate(model.as_ref(), cfg, brown, &init, n, crn, &times)?;
        let indep = simulate(model.as_ref(), cfg, brown, &init, n, derive_seed(seed, &[ROLE_BASELINE, 200, d as u64]), &times)?;
        let base: Vec<f64> =
            reference.iter().zip(&indep).map(|(a, b)| w1_rows(a, b, n_w1)).collect::<Result<_>>()?;
        let per_alpha = alphas
            .par_iter()
            .map(|&a| -> Result<Vec<(f64, f64, Option<f64>)>> {
                let snaps = simulate(model.as_ref(), cfg, stable(a)?, &init, n, crn, &times)?;
                snaps
                    .iter()
                    .zip(&reference)
                    .zip(&times)
                    .map(|((x, y), &t)| {
                        let w = w1_rows(x, y, n_w1)?;
                        let se = if d == 1 && t > 0.0 {
                            Some(paired_bootstrap_se(&x.points, &y.points, derive_seed(seed, &[ROLE_BOOTSTRAP, alpha_key(a), (t / dt).round() as u64]))?)
                        } else {
                            None
                        };
                        Ok((t, w, se))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        for (&a, rows) in alphas.iter().zip(&per_alpha) {
            let mut best = (0.0f64, 0.0f64);
            for (k, &(t, w, se)) in rows.iter().enumerate() {
                let mut c = CellRecord::new("mc_t", d, a, 2.0 - a, w, OracleTag::MonteCarlo).at(t).baseline(base[k]);
                if let Some(se) = se {
                    c = c.se(se);
                }
                out.cells.push(c);
                if w > best.0 {
                    best = (w, se.unwrap_or(0.0));
                }
            }
            out.cells.push(CellRecord::new("mc_max_t", d, a, 2.0 - a, best.0, OracleTag::MonteCarlo).se(best.1));
        }
        // t = 0: both laws are the same Dirac mass
        let t0 = out.cells_of("mc_t").filter(|c| c.d == d && c.t == Some(0.0)).map(|c| c.value).fold(0.0, f64::max);
        out.checks.push(Check::new(format!("t0_cell_zero_d{d}"), t0 == 0.0, format!("largest W1 at t = 0: {t0:e}")));
        if oracle_here {
            let f = out.fit_cells("oracle max_t d=1".into(), "oracle_max_t", |c| c.d == 1, AbscissaKind::TwoMinusAlpha, false);
            out.slope_check("oracle_max_t_slope_d1".into(), f.as_ref());
            let mut ok = true;
            let mut worst = 0.0f64;
            for &a in &alphas {
                let mc = out.cells_of("mc_t").find(|c| c.d == 1 && c.alpha == a && c.t == Some(t_last)).unwrap();
                let stat = out.cells_of("oracle_stationary").find(|c| c.alpha == a).unwrap();
                let chain = out.cells_of("chain_oracle_t").find(|c| c.alpha == a && c.t == Some(t_last)).unwrap();
                let (pass, comb) = agreement(mc.value, mc.stderr.unwrap_or(0.0), stat.value, chain.value);
                ok &= pass;
                worst = worst.max((mc.value - stat.value).abs() / comb);
            }
            out.checks.push(Check::new(
                "last_time_matches_stationary_d1",
                ok,
                format!("t = {t_last}: largest |W1_t - W1_stationary| / combined stderr = {worst:.3}"),
            ));
        }
        let f = out.fit_cells(format!("mc max_t d={d}"), "mc_max_t", |c| c.d == d, AbscissaKind::TwoMinusAlpha, false);
        out.slope_check(format!("mc_max_t_slope_d{d}"), f.as_ref());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// coupling constructions

fn coupling_rates(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::empty(ExperimentId::CouplingRates);
    let sigma0 = cfg.coupling.sigma0;
    let seed = cfg.experiment.seed;
    let sigma_lip = if cfg.experiment.model == "ou" { 0.0 } else { 0.5 };
    let mut times: Vec<f64> = cfg.grid.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        times.push(cfg.mc.t_end);
    }
    let horizon = *times.last().unwrap();
    for &d in &cfg.grid.dims {
        let model = build_model(&cfg.experiment.model, d)?;
        let theta = model.theta().expect("registry models carry their constants");
        dissipativity_check(&mut out, model.as_ref(), DissipativityKind::Dc, cfg)?;
        // (DC) with scale 2: lhs <= -2 c0 r^2 + 2 c1
        let kappa = KappaSpec::new(2.0 * theta.c0, 2.0 * theta.c1)?;
        let psi_cfg = PsiGridConfig::default();
        let psi = build_psi(kappa, sigma0, psi_cfg)?;
        let verified = psi.verify(psi.lambda, &psi_cfg);
        out.checks.push(Check::new(
            format!("psi_properties_d{d}"),
            verified.is_ok(),
            verified.err().map(|e| e.to_string()).unwrap_or_else(|| format!("r0 {:.4}, r1 {:.4}", psi.r0, psi.r1)),
        ));
        out.cells.push(CellRecord::new("psi_lambda", d, 2.0, 0.0, psi.lambda, OracleTag::ExactCdf).note("certified"));
        out.cells.push(
            CellRecord::new("psi_lambda_displayed", d, 2.0, 0.0, psi.lambda_displayed, OracleTag::ExactCdf)
                .note("2 sigma0^2 / I1"),
        );

        let x = start(d, cfg.coupling.x0);
        let y = start(d, cfg.coupling.y0);
        let mid = start(d, 0.5 * (cfg.coupling.x0 + cfg.coupling.y0));
        let bcfg = IntegratorConfig::new(cfg.mc.dt, horizon, cfg.mc.n_paths, NoiseKind::Brownian);
        let cseed = derive_seed(seed, &[ROLE_COUPLING, d as u64]);
        let far = reflection_coupling_par(model.as_ref(), sigma0, &x, &y, &bcfg, cseed, &times, cfg.mc.block)?;
        let min_apart = (cfg.mc.n_paths / 20).max(10);
        match coupled_decay_rate(&far, horizon, min_apart) {
            Some(fit) => {
                out.cells.push(
                    CellRecord::new("reflection_rate", d, 2.0, 0.0, fit.rate, OracleTag::MonteCarlo)
                        .se(fit.rate_se)
                        .note(format!("{} times fitted", fit.used)),
                );
                out.checks.push(Check::new(
                    format!("reflection_rate_ge_lambda_d{d}"),
                    fit.rate >= psi.lambda - 3.0 * fit.rate_se,
                    format!("fitted {:.4} ± {:.4} vs lambda {:.4}", fit.rate, fit.rate_se, psi.lambda),
                ));
            }
            None => out.missing_fits.push(format!("reflection decay d={d}")),
        }
        let near = reflection_coupling_par(model.as_ref(), sigma0, &mid, &y, &bcfg, cseed ^ 1, &times, cfg.mc.block)?;
        let (u, p) = mann_whitney_greater(&far.coupling_times, &near.coupling_times);
        out.cells.push(CellRecord::new("coupling_time_mw_p", d, 2.0, 0.0, p, OracleTag::MonteCarlo).note(format!("U {u}")));
        out.checks.push(Check::new(format!("coupling_times_grow_with_distance_d{d}"), p < 0.05, format!("Mann-Whitney p {p:.4}")));

        let alphas: Vec<f64> = cfg.grid.alpha.iter().copied().filter(|&a| a < 2.0).collect();
        for &a in &alphas {
            let scfg = IntegratorConfig::new(cfg.mc.dt, horizon, cfg.mc.n_paths, stable(a)?);
            let probe = w1_contraction_probe(model.as_ref(), &x, &y, &times, &scfg, derive_seed(cseed, &[alpha_key(a)]), horizon)?;
            let rate = stable_rate_for_window(&theta, d, (a, a), 1.0, sigma_lip, OverlapQuadrature::for_dim(d));
            let se = 0.5 * (probe.rate_ci.1 - probe.rate_ci.0) / 1.96;
            out.cells.push(
                CellRecord::new("w1_contraction_rate", d, a, 2.0 - a, probe.rate, OracleTag::MonteCarlo)
                    .se(se)
                    .converged(!probe.flagged)
                    .note(format!("{} times fitted", probe.used)),
            );
            match rate {
                Ok(r) => {
                    out.cells.push(
                        CellRecord::new("stable_rate_lambda", d, a, 2.0 - a, r.lambda, OracleTag::ExactCdf)
                            .note(format!("C {:.4}", r.c)),
                    );
                    if !probe.flagged {
                        out.checks.push(Check::new(
                            format!("stable_lambda_below_fitted_d{d}_alpha{a}"),
                            r.lambda <= probe.rate_ci.1,
                            format!("lambda {:.4e} vs fitted {:.4} (CI upper {:.4})", r.lambda, probe.rate, probe.rate_ci.1),
                        ));
                    }
                }
                Err(e) => out.skipped.push(format!("stable constants d={d} alpha={a}: {e}")),
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// generator differences along exact OU semigroups

/// `E cos(<xi, X_t>)` for the OU model started at `x` is
/// `damping * cos(<xi e^{-t}, x>)`; returns `damping`.
fn ou_cos_damping(index: f64, xi_norm: f64, t: f64) -> f64 {
    (-xi_norm.powf(index) * (1.0 - (-index * t).exp()) / (2.0 * index)).exp()
}

fn envelope_brownian(d: usize, alpha: f64, t: f64) -> f64 {
    d as f64 * ((3.0 - alpha) * t.powf(-0.5) - t.powf(0.5 * (1.0 - alpha)) / (3.0 - alpha))
}

fn envelope_stable(d: usize, alpha: f64, vartheta: f64, t: f64) -> f64 {
    d as f64 * (vartheta - alpha).abs() * t.powf(-1.0 / alpha)
}

fn generator_checks(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::empty(ExperimentId::GeneratorChecks);
    if !has_oracle(&cfg.experiment.model) {
        out.skipped.push(format!(
            "model `{}` has no closed-form semigroup; generator checks run on the OU family only",
            cfg.experiment.model
        ));
        return Ok(out);
    }
    let alphas: Vec<f64> = cfg.grid.alpha.iter().copied().filter(|&a| a < 2.0).collect();
    let mut times: Vec<f64> = cfg.grid.times.iter().copied().filter(|&t| t > 0.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for &d in &cfg.grid.dims {
        let model = build_model(&cfg.experiment.model, d)?;
        let quad = QuadratureConfig::for_dim(d);
        let mut xi = vec![0.0; d];
        xi[0] = 1.0;
        let diag = 1.0 / (d as f64).sqrt();
        let probes: Vec<Vec<f64>> = vec![vec![0.0; d], start(d, 0.5), vec![diag; d]];

        // affine functions stay affine under the Brownian OU semigroup
        let mut worst_second = 0.0f64;
        let mut worst_j1 = 0.0f64;
        for &a in &alphas {
            for &t in &times {
                let g = Affine { a: xi.iter().map(|v| v * (-t).exp()).collect(), c: 0.3 };
                for x in &probes {
                    let e = generator_gap_stable_vs_brownian(&g, x, model.as_ref(), a, &quad)?;
                    for (name, v) in &e.pieces {
                        if *name == "J1" {
                            worst_j1 = worst_j1.max(v.abs());
                        } else {
                            worst_second = worst_second.max(v.abs());
                        }
                    }
                }
            }
        }
        out.checks.push(Check::new(
            format!("affine_second_order_pieces_vanish_d{d}"),
            worst_second <= 1e-9,
            format!("max |J21|, |J22| = {worst_second:.3e}; max |J1| = {worst_j1:.3e}"),
        ));

        // (A^alpha - A^Q) Q_t g for g = cos(<xi, .>)
        for &t in &times {
            let damping = ou_cos_damping(2.0, 1.0, t);
            let f = PlaneWave::new(xi.iter().map(|v| v * (-t).exp()).collect());
            for (p, x) in probes.iter().enumerate() {
                for &a in &alphas {
                    let e = generator_gap_stable_vs_brownian(&f, x, model.as_ref(), a, &quad)?;
                    let gap = (damping * e.value).abs();
                    let err = damping * e.quad_error_estimate;
                    let env = envelope_brownian(d, a, t);
                    let pieces =
                        e.pieces.iter().map(|(n, v)| format!("{n}={:.6e}", damping * v)).collect::<Vec<_>>().join(" ");
                    out.cells.push(
                        CellRecord::new("gap_brownian", d, a, 2.0 - a, gap, OracleTag::ExactCdf)
                            .at(t)
                            .se(err)
                            .baseline(env)
                            .note(format!("probe {p}; {pieces}; gap/envelope {:.4}{}", gap / env, flag(gap, err))),
                    );
                }
            }
        }
        // gap -> 0 as alpha -> 2 on every probe and time
        let mut vanish = true;
        let mut detail = Vec::new();
        for &t in &times {
            for p in 0..probes.len() {
                let tag = format!("probe {p};");
                let row: Vec<&CellRecord> = out
                    .cells_of("gap_brownian")
                    .filter(|c| c.d == d && c.t == Some(t) && c.note.starts_with(&tag))
                    .collect();
                let (lo, hi) = (row.iter().min_by(|a, b| a.alpha.total_cmp(&b.alpha)), row.iter().max_by(|a, b| a.alpha.total_cmp(&b.alpha)));
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if hi.value > lo.value {
                        vanish = false;
                        detail.push(format!("t={t} probe {p}: {:.3e} at alpha {} > {:.3e} at alpha {}", hi.value, hi.alpha, lo.value, lo.alpha));
                    }
                }
            }
            let pts: Vec<RatePoint> = out
                .cells_of("gap_brownian")
                .filter(|c| c.d == d && c.t == Some(t) && c.note.starts_with("probe 0;"))
                .map(CellRecord::rate_point)
                .collect();
            if let Some(fit) = RateFit::fit(&format!("gap_brownian d={d} t={t}"), AbscissaKind::TwoMinusAlpha, &pts, false, FIT_LEVEL) {
                if !(fit.slope_ci.0 > 0.0) {
                    vanish = false;
                    detail.push(format!("t={t}: slope CI [{:.3}, {:.3}]", fit.slope_ci.0, fit.slope_ci.1));
                }
                out.fits.push(fit);
            }
        }
        out.checks.push(Check::new(
            format!("gap_vanishes_as_alpha_to_2_d{d}"),
            vanish,
            if detail.is_empty() { "gap decreases toward alpha = 2 on all probes".into() } else { detail.join("; ") },
        ));

        // (A^alpha - A^vartheta) P^alpha_t g
        let mut worst_equal = 0.0f64;
        for &v in &cfg.grid.vartheta {
            for &t in &times {
                for &a in &alphas {
                    let damping = ou_cos_damping(a, 1.0, t);
                    let f = PlaneWave::new(xi.iter().map(|u| u * (-t).exp()).collect());
                    let x = &probes[1];
                    let (lo, hi) = if a <= v { (a, v) } else { (v, a) };
                    if v >= 2.0 {
                        continue;
                    }
                    let e = generator_gap_stable_vs_stable(&f, x, model.as_ref(), lo, hi, &quad)?;
                    let gap = (damping * e.value).abs();
                    let err = damping * e.quad_error_estimate;
                    let env = envelope_stable(d, a, v, t);
                    out.cells.push(
                        CellRecord::new("gap_stable", d, a, (v - a).abs(), gap, OracleTag::ExactCdf)
                            .vartheta(v)
                            .at(t)
                            .se(err)
                            .baseline(env)
                            .note(format!("probe 1; gap/envelope {}{}", if env > 0.0 { format!("{:.4}", gap / env) } else { "-".into() }, flag(gap, err))),
                    );
                    let same = generator_gap_stable_vs_stable(&f, x, model.as_ref(), a, a, &quad)?;
                    worst_equal = worst_equal.max(same.value.abs());
                }
            }
        }
        if !cfg.grid.vartheta.is_empty() {
            out.checks.push(Check::new(
                format!("equal_indices_gap_zero_d{d}"),
                worst_equal <= 1e-12,
                format!("max |(A^a - A^a) P_t g| = {worst_equal:.3e}"),
            ));
        }
    }
    Ok(out)
}

fn flag(value: f64, err: f64) -> &'static str {
    if value < 3.0 * err {
        "; quadrature-noise dominated"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId, extra: &[&str]) -> ExperimentConfig {
        let mut o: Vec<String> =
            ["mc.n_paths=400", "mc.dt=0.02", "mc.t_end=2.0", "mc.burn_in=1.0", "mc.assignment_n=128"].map(String::from).to_vec();
        o.extend(extra.iter().map(|s| s.to_string()));
        ExperimentConfig::from_id(id, &o).unwrap()
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seed(1, &[ROLE_CRN, 0]);
        assert_eq!(a, derive_seed(1, &[ROLE_CRN, 0]));
        assert_ne!(a, derive_seed(1, &[ROLE_BASELINE, 0]));
        assert_ne!(a, derive_seed(2, &[ROLE_CRN, 0]));
        assert_ne!(derive_seed(1, &[1, 2]), derive_seed(1, &[2, 1]));
    }

    #[test]
    fn exit_codes_follow_priority() {
        let mut r = ExperimentResult::empty(ExperimentId::RateVsBrownian);
        assert_eq!(r.exit_code(), exit::CELL_FAILURE);
        r.cells.push(CellRecord::new("x", 1, 1.5, 0.5, 1.0, OracleTag::MonteCarlo));
        assert_eq!(r.exit_code(), exit::SUCCESS);
        r.checks.push(Check::new("c", false, ""));
        assert_eq!(r.exit_code(), exit::CHECK_FAILED);
        r.missing_fits.push("f".into());
        assert_eq!(r.exit_code(), exit::CELL_FAILURE);
    }

    #[test]
    fn agreement_uses_combined_stderr() {
        assert!(agreement(1.025, 0.01, 1.0, 1.0).0);
        assert!(!agreement(1.05, 0.01, 1.0, 1.0).0);
        // the chain's exact offset widens the band
        assert!(agreement(1.05, 0.01, 1.0, 1.02).0);
    }

    #[test]
    fn envelopes_vanish_at_the_limits() {
        assert!(envelope_brownian(1, 2.0, 0.3).abs() < 1e-15);
        assert!(envelope_brownian(2, 1.5, 0.3) > 0.0);
        assert_eq!(envelope_stable(3, 1.4, 1.4, 0.5), 0.0);
    }

    #[test]
    fn cos_damping_matches_oracle() {
        for (a, t) in [(1.5, 0.3), (2.0, 1.0), (1.9, 2.5)] {
            let want = stabrate_core::oracle::ou_semigroup_cos(a, 1.0, 0.0, t);
            assert!((ou_cos_damping(a, 1.0, t) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn small_rate_vs_brownian_runs() {
        let cfg = small(ExperimentId::RateVsBrownian, &[]);
        let r = run(&cfg).unwrap();
        assert_eq!(r.cells_of("oracle").count(), 5);
        assert_eq!(r.cells_of("mc_crn").count(), 5);
        assert!(r.fit("oracle d=1").is_some());
        assert!(r.check("oracle_slope_d1").unwrap().passed);
        assert!(r.check("dc_d1").unwrap().passed);
        // reproducible
        let again = run(&cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn small_dimension_sweep_emits_ratios() {
        let cfg = small(ExperimentId::RateVsBrownian, &["grid.dims=[1, 2]", "grid.alpha=[1.9]", "mc.replicates=2"]);
        let r = run(&cfg).unwrap();
        assert_eq!(r.cells_of("ratio_d").count(), 2);
        assert!(r.check("d_monotone_alpha1.9").is_some());
        assert!(r.cells_of("alpha2_indep").count() == 2);
    }

    #[test]
    fn small_stable_stable_runs() {
        let r = run(&small(ExperimentId::RateStableStable, &[])).unwrap();
        assert!(r.check("oracle_symmetric_theta1.5").unwrap().passed);
        assert!(r.check("mc_symmetric_theta1.5").unwrap().passed);
        assert!(r.fit("oracle d=1").is_some());
    }

    #[test]
    fn small_finite_time_runs() {
        let cfg = small(ExperimentId::FiniteTimeUniformity, &["grid.times=[0.5, 1.0, 2.0]"]);
        let r = run(&cfg).unwrap();
        assert!(r.check("t0_cell_zero_d1").unwrap().passed);
        assert_eq!(r.cells_of("oracle_max_t").count(), 5);
        assert!(r.check("oracle_max_t_slope_d1").unwrap().passed);
    }

    #[test]
    fn generator_checks_skip_multiplicative() {
        let cfg = small(ExperimentId::GeneratorChecks, &["experiment.model=multiplicative", "grid.times=[0.1, 0.5]"]);
        let r = run(&cfg).unwrap();
        assert!(r.cells.is_empty() && !r.skipped.is_empty());
        assert_eq!(r.exit_code(), exit::CELL_FAILURE);
    }
}
