//! `stabrate`: run the rate experiments and write their reports.
//!
//! Exit codes: 0 success, 2 failed check, 3 cell-convergence failure (or an
//! empty result), 4 configuration error. Runtime errors also exit with 4 when
//! they stem from invalid input, 1 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stabrate::config::{ExperimentConfig, ExperimentId};
use stabrate::error::HarnessError;
use stabrate::experiments::{exit, run, ExperimentResult};
use stabrate::registry::build_model;
use stabrate::report::emit_report;
use stabrate::snapshot::{load_binary, load_csv, save_binary, save_csv, Snapshot};
use stabrate_core::sde::{simulate_snapshots, InitialCondition, IntegratorConfig, NoiseKind};

#[derive(Parser, Debug)]
#[command(name = "stabrate", version, about = "Convergence-rate experiments for stable-driven SDEs")]
struct Cli {
    /// Experiment seed (overrides `experiment.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report directory (overrides `experiment.output_dir`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// TOML config file; a previous run's manifest also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set mc.n_paths=5000`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// W1 between stable and Brownian stationary laws versus 2 - alpha.
    RateVsBrownian,
    /// W1 between two stable stationary laws versus |theta - alpha|.
    RateStableStable,
    /// W1 between time-t laws, uniformly over t.
    FiniteTimeUniformity,
    /// Comparison function, reflection coupling and contraction rates.
    CouplingRates,
    /// Generator differences along exact OU semigroups.
    GeneratorChecks,
    /// Run the experiment named in `--config`.
    Run,
    /// Print the default config of an experiment.
    Defaults { id: ExperimentId },
    /// Simulate one ensemble and save its terminal snapshot.
    Snapshot(SnapshotArgs),
    /// Convert a snapshot between binary and CSV (chosen by extension).
    Convert { input: PathBuf, output: PathBuf },
}

#[derive(Args, Debug)]
struct SnapshotArgs {
    #[arg(long, default_value = "ou")]
    model: String,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Stability index in (1, 2]; 2 is Brownian.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    n_paths: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    time: f64,
    /// First coordinate of the start point.
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    /// `.csv` writes CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn experiment_of(cmd: &Command) -> Option<ExperimentId> {
    Some(match cmd {
        Command::RateVsBrownian => ExperimentId::RateVsBrownian,
        Command::RateStableStable => ExperimentId::RateStableStable,
        Command::FiniteTimeUniformity => ExperimentId::FiniteTimeUniformity,
        Command::CouplingRates => ExperimentId::CouplingRates,
        Command::GeneratorChecks => ExperimentId::GeneratorChecks,
        _ => return None,
    })
}

fn load_config(cli: &Cli, id: Option<ExperimentId>) -> Result<ExperimentConfig, HarnessError> {
    let mut overrides = Vec::new();
    if let Some(id) = id {
        overrides.push(format!("experiment.id=\"{}\"", id.as_str()));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("experiment.seed={s}"));
    }
    if let Some(d) = &cli.output_dir {
        let quoted = toml::Value::String(d.to_string_lossy().into_owned()).to_string();
        overrides.push(format!("experiment.output_dir={quoted}"));
    }
    overrides.extend(cli.set.iter().cloned());
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
        None if id.is_some() => String::new(),
        None => return Err(HarnessError::Config("`run` needs --config".into())),
    };
    ExperimentConfig::load(&text, &overrides)
}

fn print_summary(r: &ExperimentResult, cfg: &ExperimentConfig) {
    println!("experiment {} (model {}, seed {})", r.id.as_str(), cfg.experiment.model, cfg.experiment.seed);
    for f in &r.fits {
        println!(
            "  fit {:<24} slope {:>8.4}  CI [{:.4}, {:.4}]  ({} points)",
            f.label,
            f.slope,
            f.slope_ci.0,
            f.slope_ci.1,
            f.points.len()
        );
    }
    for c in &r.checks {
        println!("  {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for m in &r.missing_fits {
        println!("  MISSING fit {m}: fewer than four usable cells");
    }
    for s in &r.skipped {
        println!("  SKIPPED {s}");
    }
}

fn run_experiment(cli: &Cli, id: Option<ExperimentId>) -> Result<i32, HarnessError> {
    let cfg = load_config(cli, id)?;
    let result = run(&cfg)?;
    print_summary(&result, &cfg);
    let files = emit_report(&result, &cfg, &cfg.experiment.output_dir)?;
    println!("  manifest {}", files.manifest.display());
    Ok(result.exit_code())
}

fn snapshot(a: &SnapshotArgs) -> Result<i32, HarnessError> {
    let model = build_model(&a.model, a.dim)?;
    let noise = NoiseKind::stable(a.alpha)?;
    let cfg = IntegratorConfig::new(a.dt, a.time, a.n_paths, noise);
    let mut x = vec![0.0; a.dim];
    x[0] = a.x0;
    let seed = 0;
    let e = simulate_snapshots(model.as_ref(), &cfg, &InitialCondition::Point(x), seed, &[a.time])?.remove(0);
    let s = Snapshot::from(&e);
    if is_csv(&a.out) {
        save_csv(&a.out, &s)?;
    } else {
        save_binary(&a.out, &s)?;
    }
    println!("{} paths, d = {}, t = {} -> {}", s.len(), s.dim, s.time, a.out.display());
    Ok(exit::SUCCESS)
}

fn convert(input: &Path, output: &Path) -> Result<i32, HarnessError> {
    let s = if is_csv(input) { load_csv(input)? } else { load_binary(input)? };
    if is_csv(output) {
        save_csv(output, &s)?;
    } else {
        save_binary(output, &s)?;
    }
    Ok(exit::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<i32, HarnessError> {
    match &cli.command {
        Command::Run => run_experiment(cli, None),
        Command::Defaults { id } => {
            print!("{}", ExperimentConfig::defaults(*id).to_toml());
            Ok(exit::SUCCESS)
        }
        Command::Snapshot(a) => snapshot(a),
        Command::Convert { input, output } => convert(input, output),
        other => run_experiment(cli, experiment_of(other)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG_ERROR } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG_ERROR as u8);
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                HarnessError::Config(_) => exit::CONFIG_ERROR,
                HarnessError::Core(ref c) if c.is_input_error() => exit::CONFIG_ERROR,
                _ => 1,
            };
            ExitCode::from(code as u8)
        }
    }
}
