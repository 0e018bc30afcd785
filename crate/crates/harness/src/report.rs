//! Report files, all prefixed with the experiment id: RFC-4180 CSV tables, a
//! run manifest (the config plus a `[run]` section; reloadable as a config),
//! and a self-contained plot script.
//! Numbers are printed in Rust's shortest round-trip form, so reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiments::ExperimentResult;

pub const PLOT_SCRIPT_NAME: &str = "plot_rates.py";
pub const PLOT_SCRIPT: &str = include_str!("../sample/plot_rates.py");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub manifest: PathBuf,
    /// CSV tables and the plot script, in write order.
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunSection<'a> {
    version: &'a str,
    experiment: &'a str,
    seed: u64,
    exit_code: i32,
    checks_passed: usize,
    checks_failed: usize,
    files: Vec<String>,
    missing_fits: &'a [String],
    skipped: &'a [String],
}

#[derive(Serialize)]
struct ManifestTail<'a> {
    run: RunSection<'a>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Format(format!("{}: {other:?}", path.display())),
    })?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn cells_file(exp: &str) -> String {
    format!("{exp}_cells.csv")
}

pub fn fits_file(exp: &str) -> String {
    format!("{exp}_fits.csv")
}

pub fn fit_points_file(exp: &str) -> String {
    format!("{exp}_fit_points.csv")
}

pub fn checks_file(exp: &str) -> String {
    format!("{exp}_checks.csv")
}

pub fn manifest_file(exp: &str) -> String {
    format!("{exp}_manifest.toml")
}

/// Write all report files into `dir` (created if missing). An experiment with
/// no cells writes the manifest only.
pub fn emit_report(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let exp = result.id.as_str();
    let mut files = Vec::new();
    if !result.cells.is_empty() {
        let p = dir.join(cells_file(exp));
        write_csv(
            &p,
            &["kind", "d", "alpha", "vartheta", "t", "abscissa", "value", "stderr", "baseline", "oracle", "converged", "note"],
            result.cells.iter().map(|c| {
                vec![
                    c.kind.to_string(),
                    c.d.to_string(),
                    num(c.alpha),
                    opt(c.vartheta),
                    opt(c.t),
                    num(c.abscissa),
                    num(c.value),
                    opt(c.stderr),
                    opt(c.baseline),
                    c.oracle.as_str().to_string(),
                    c.converged.to_string(),
                    c.note.clone(),
                ]
            }),
        )?;
        files.push(p);

        let p = dir.join(fits_file(exp));
        write_csv(
            &p,
            &[
                "label",
                "abscissa_kind",
                "n_points",
                "slope",
                "slope_lo",
                "slope_hi",
                "intercept",
                "intercept_lo",
                "intercept_hi",
                "baseline_subtracted",
            ],
            result.fits.iter().map(|f| {
                vec![
                    f.label.clone(),
                    f.abscissa_kind.as_str().to_string(),
                    f.points.len().to_string(),
                    num(f.slope),
                    num(f.slope_ci.0),
                    num(f.slope_ci.1),
                    num(f.intercept),
                    num(f.intercept_ci.0),
                    num(f.intercept_ci.1),
                    f.baseline_subtracted.to_string(),
                ]
            }),
        )?;
        files.push(p);

        let p = dir.join(fit_points_file(exp));
        write_csv(
            &p,
            &["label", "abscissa", "w1", "stderr"],
            result.fits.iter().flat_map(|f| {
                f.points.iter().map(|q| vec![f.label.clone(), num(q.abscissa), num(q.w1), num(q.stderr)])
            }),
        )?;
        files.push(p);

        let p = dir.join(checks_file(exp));
        write_csv(
            &p,
            &["name", "passed", "detail"],
            result.checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]),
        )?;
        files.push(p);

        let p = dir.join(PLOT_SCRIPT_NAME);
        fs::write(&p, PLOT_SCRIPT).map_err(|e| HarnessError::io(&p, e))?;
        files.push(p);
    }

    let manifest = dir.join(manifest_file(exp));
    let names: Vec<String> =
        files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    let tail = ManifestTail {
        run: RunSection {
            version: env!("CARGO_PKG_VERSION"),
            experiment: exp,
            seed: cfg.experiment.seed,
            exit_code: result.exit_code(),
            checks_passed: result.checks.iter().filter(|c| c.passed).count(),
            checks_failed: result.checks.iter().filter(|c| !c.passed).count(),
            files: names,
            missing_fits: &result.missing_fits,
            skipped: &result.skipped,
        },
    };
    let text = format!(
        "{}\n{}",
        cfg.to_toml(),
        toml::to_string(&tail).map_err(|e| HarnessError::Format(e.to_string()))?
    );
    fs::write(&manifest, text).map_err(|e| HarnessError::io(&manifest, e))?;
    Ok(ReportFiles { manifest, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentId;
    use crate::experiments::{CellRecord, OracleTag};

    #[test]
    fn empty_result_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::defaults(ExperimentId::GeneratorChecks);
        let r = ExperimentResult::empty(ExperimentId::GeneratorChecks);
        let out = emit_report(&r, &cfg, dir.path()).unwrap();
        assert!(out.files.is_empty());
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        let text = fs::read_to_string(&out.manifest).unwrap();
        assert!(text.contains("exit_code = 3"));
        // the manifest reloads as a config
        assert_eq!(ExperimentConfig::load(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn csv_quotes_and_options() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::defaults(ExperimentId::RateVsBrownian);
        let mut r = ExperimentResult::empty(ExperimentId::RateVsBrownian);
        let mut c = CellRecord::new("oracle", 1, 1.9, 0.1, 0.028, OracleTag::ExactCdf);
        c.note = "a, \"quoted\" note".into();
        r.cells.push(c);
        emit_report(&r, &cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("rate_vs_brownian_cells.csv")).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "oracle,1,1.9,,,0.1,0.028,,,exact-cdf,true,\"a, \"\"quoted\"\" note\"");
        assert!(text.contains("\r\n"));
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let cfg = ExperimentConfig::defaults(ExperimentId::RateVsBrownian);
        let r = ExperimentResult::empty(ExperimentId::RateVsBrownian);
        let e = emit_report(&r, &cfg, &blocker.join("sub")).unwrap_err();
        assert!(matches!(e, HarnessError::Io { .. }));
        assert!(e.to_string().contains("file"));
    }
}
