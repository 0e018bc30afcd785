//! The `stabrate` binary: exit codes, reports, reruns from manifests, snapshots.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 10] = [
    "--set",
    "mc.n_paths=400",
    "--set",
    "mc.dt=0.02",
    "--set",
    "mc.t_end=2.0",
    "--set",
    "mc.burn_in=1.0",
    "--set",
    "mc.assignment_n=128",
];

fn stabrate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabrate")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&stabrate(&["--help"])), 0);
    assert_eq!(code(&stabrate(&["--no-such-flag"])), 4);
    assert_eq!(code(&stabrate(&["run"])), 4);
    let o = stabrate(&["generator-checks", "--set", "mc.n_paths=0"]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    let o = stabrate(&["generator-checks", "--set", "mc.unknown_key=1"]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    let o = stabrate(&["snapshot", "--alpha", "2.5", "--out", "/dev/null"]);
    assert_eq!(code(&o), 4, "{}", text(&o));
}

#[test]
fn defaults_reload_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = stabrate(&["defaults", "coupling_rates"]);
    assert_eq!(code(&o), 0);
    let p = dir.path().join("c.toml");
    fs::write(&p, &o.stdout).unwrap();
    let again = stabrate(&["defaults", "coupling_rates"]);
    assert_eq!(o.stdout, again.stdout);
    let cfg = stabrate::config::ExperimentConfig::load(&String::from_utf8(o.stdout).unwrap(), &[]).unwrap();
    assert_eq!(cfg.experiment.id, stabrate::config::ExperimentId::CouplingRates);
}

#[test]
fn skipped_experiment_exits_with_cell_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = stabrate(&["generator-checks", "--output-dir", out, "--set", "experiment.model=\"multiplicative\""]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    let manifest = fs::read_to_string(dir.path().join("generator_checks_manifest.toml")).unwrap();
    assert!(manifest.contains("exit_code = 3"));
    assert!(csv_files(dir.path()).is_empty());
}

#[test]
fn failed_check_exits_2_and_reruns_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["rate-stable-stable", "--seed", "5", "--output-dir", a.path().to_str().unwrap()];
    args.extend(SMALL);
    let o = stabrate(&args);
    // the stable-stable oracle slope on the default grid sits above the window
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("FAIL oracle_slope_d1_theta1.5"));
    let manifest = a.path().join("rate_stable_stable_manifest.toml");
    let o2 = stabrate(&["run", "--config", manifest.to_str().unwrap(), "--output-dir", b.path().to_str().unwrap()]);
    assert_eq!(code(&o2), 2, "{}", text(&o2));
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
    let cells = String::from_utf8(fa.iter().find(|f| f.0.ends_with("_cells.csv")).unwrap().1.clone()).unwrap();
    assert!(cells.starts_with("kind,d,alpha,vartheta,t,abscissa,value,stderr,baseline,oracle,converged,note\r\n"));
    assert!(cells.contains(",exact-cdf,") && cells.contains(",monte-carlo,"));
}

#[test]
fn passing_run_exits_0_and_plot_script_renders() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["generator-checks", "--output-dir", out];
    args.extend(SMALL);
    args.extend(["--set", "grid.times=[0.1, 0.2, 0.5, 1.0]"]);
    let o = stabrate(&args);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let script = dir.path().join("plot_rates.py");
    assert!(script.exists());
    if Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success()) {
        let r = Command::new("python3").arg(&script).output().unwrap();
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let svg = fs::read_to_string(dir.path().join("generator_checks_rates.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    }
}

#[test]
fn snapshot_and_convert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bin");
    let csv = dir.path().join("s.csv");
    let back = dir.path().join("back.bin");
    let o = stabrate(&[
        "snapshot", "--dim", "2", "--alpha", "1.7", "--n-paths", "50", "--dt", "0.01", "--time", "0.5", "--x0", "1.5", "--out",
        bin.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(code(&stabrate(&["convert", bin.to_str().unwrap(), csv.to_str().unwrap()])), 0);
    assert_eq!(code(&stabrate(&["convert", csv.to_str().unwrap(), back.to_str().unwrap()])), 0);
    assert_eq!(fs::read(&bin).unwrap(), fs::read(&back).unwrap());
    let s = stabrate::snapshot::load_binary(&bin).unwrap();
    assert_eq!((s.dim, s.len(), s.time), (2, 50, 0.5));
    let o = stabrate(&["convert", dir.path().join("missing.bin").to_str().unwrap(), csv.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
