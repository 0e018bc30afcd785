//! Experiment configuration: sectioned TOML (`[experiment]`, `[grid]`, `[mc]`,
//! `[coupling]`) layered over per-experiment defaults, with `section.key=value`
//! overrides from the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentId {
    RateVsBrownian,
    RateStableStable,
    FiniteTimeUniformity,
    CouplingRates,
    GeneratorChecks,
}

impl ExperimentId {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::RateVsBrownian => "rate_vs_brownian",
            ExperimentId::RateStableStable => "rate_stable_stable",
            ExperimentId::FiniteTimeUniformity => "finite_time_uniformity",
            ExperimentId::CouplingRates => "coupling_rates",
            ExperimentId::GeneratorChecks => "generator_checks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ExperimentId::RateVsBrownian,
            ExperimentId::RateStableStable,
            ExperimentId::FiniteTimeUniformity,
            ExperimentId::CouplingRates,
            ExperimentId::GeneratorChecks,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: ExperimentId,
    pub model: String,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub alpha: Vec<f64>,
    pub vartheta: Vec<f64>,
    pub dims: Vec<usize>,
    /// Reporting times (finite-time and contraction experiments).
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub burn_in: f64,
    /// Independent replicates averaged per cell.
    pub replicates: usize,
    /// Sample size handed to the assignment solver in d > 1.
    pub assignment_n: usize,
    /// Paths per parallel work unit.
    pub block: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub sigma0: f64,
    /// Start point (first coordinate; the rest are zero).
    pub x0: f64,
    /// Second start point for coupled / contraction runs.
    pub y0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub mc: McSection,
    pub coupling: CouplingSection,
}

impl ExperimentConfig {
    /// Desk-scale defaults for one experiment.
    pub fn defaults(id: ExperimentId) -> Self {
        let rate_alphas = vec![1.7, 1.8, 1.9, 1.95, 1.98];
        let (alpha, vartheta, times, mc) = match id {
            ExperimentId::RateVsBrownian => (rate_alphas, vec![], vec![], mc(20_000, 0.01, 8.0, 4.0)),
            ExperimentId::RateStableStable => {
                (vec![1.2, 1.3, 1.4, 1.45, 1.48], vec![1.5], vec![], mc(20_000, 0.01, 8.0, 4.0))
            }
            ExperimentId::FiniteTimeUniformity => {
                (rate_alphas, vec![], vec![0.25, 0.5, 1.0, 2.0, 5.0, 10.0], mc(20_000, 0.01, 10.0, 0.0))
            }
            ExperimentId::CouplingRates => (
                vec![1.5, 1.8],
                vec![],
                (1..=10).map(|k| 0.3 * k as f64).collect(),
                mc(4_000, 0.01, 3.0, 0.0),
            ),
            ExperimentId::GeneratorChecks => {
                (vec![1.5, 1.7, 1.9, 1.95, 1.99], vec![1.9], vec![0.05, 0.1, 0.25, 0.5, 1.0], mc(4_000, 0.01, 2.0, 0.0))
            }
        };
        Self {
            experiment: ExperimentSection { id, model: "ou".into(), seed: 1, output_dir: PathBuf::from("out") },
            grid: GridSection { alpha, vartheta, dims: vec![1], times },
            mc,
            coupling: CouplingSection { sigma0: 1.0, x0: 4.0, y0: 0.0 },
        }
    }

    /// Parse `text` over the defaults of its `experiment.id`, then apply
    /// `section.key=value` overrides (values parsed as TOML, bare strings
    /// accepted), then validate.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut user: Table = text.parse::<Table>().map_err(|e| HarnessError::Config(e.to_string()))?;
        // a report manifest is a config plus run metadata
        user.remove("run");
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let id = user
            .get("experiment")
            .and_then(|e| e.get("id"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| HarnessError::Config("missing experiment.id".into()))?;
        let id = ExperimentId::parse(id).ok_or_else(|| HarnessError::Config(format!("unknown experiment id `{id}`")))?;
        let mut merged = Table::try_from(Self::defaults(id)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = Value::Table(merged).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_id(id: ExperimentId, overrides: &[String]) -> Result<Self, HarnessError> {
        Self::load(&format!("[experiment]\nid = \"{}\"\n", id.as_str()), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        for (name, grid) in [("grid.alpha", &self.grid.alpha), ("grid.vartheta", &self.grid.vartheta)] {
            if let Some(a) = grid.iter().find(|a| !(**a > 1.0 && **a <= 2.0)) {
                return bad(format!("{name} entries must lie in (1, 2]; got {a}"));
            }
        }
        if self.grid.alpha.is_empty() {
            return bad("grid.alpha must not be empty".into());
        }
        if self.grid.dims.is_empty() || self.grid.dims.contains(&0) {
            return bad("grid.dims must be nonempty with entries >= 1".into());
        }
        let mc = &self.mc;
        if mc.n_paths < 4 || mc.replicates == 0 || mc.assignment_n < 4 || mc.block == 0 {
            return bad("mc.n_paths, mc.assignment_n >= 4 and mc.replicates, mc.block >= 1 required".into());
        }
        if !(mc.dt > 0.0 && mc.dt < 1.0) {
            return bad(format!("mc.dt must lie in (0, 1); got {}", mc.dt));
        }
        if !(mc.t_end > 0.0 && mc.burn_in >= 0.0 && mc.burn_in <= mc.t_end) {
            return bad("need mc.t_end > 0 and 0 <= mc.burn_in <= mc.t_end".into());
        }
        let on_grid = |t: f64| {
            let k = (t / mc.dt).round();
            (k * mc.dt - t).abs() <= 1e-9 * t.abs().max(mc.dt)
        };
        for t in self.grid.times.iter().chain([&mc.t_end, &mc.burn_in]) {
            if !(*t >= 0.0) || !on_grid(*t) || *t > mc.t_end + 1e-12 {
                return bad(format!("time {t} must be a multiple of mc.dt within [0, mc.t_end]"));
            }
        }
        if !(self.coupling.sigma0 > 0.0) {
            return bad("coupling.sigma0 must be positive".into());
        }
        if !crate::registry::MODEL_IDS.contains(&self.experiment.model.as_str()) {
            return bad(format!("unknown model `{}`; known: {:?}", self.experiment.model, crate::registry::MODEL_IDS));
        }
        Ok(())
    }
}

fn mc(n_paths: usize, dt: f64, t_end: f64, burn_in: f64) -> McSection {
    McSection { n_paths, dt, t_end, burn_in, replicates: 1, assignment_n: 2048, block: 1024 }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(table: &mut Table, spec: &str) -> Result<(), HarnessError> {
    let (path, raw) =
        spec.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key `{path}`")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| HarnessError::Config(format!("`{k}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        for id in [
            ExperimentId::RateVsBrownian,
            ExperimentId::RateStableStable,
            ExperimentId::FiniteTimeUniformity,
            ExperimentId::CouplingRates,
            ExperimentId::GeneratorChecks,
        ] {
            let c = ExperimentConfig::defaults(id);
            c.validate().unwrap();
            let back = ExperimentConfig::load(&c.to_toml(), &[]).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_values_and_overrides_layer() {
        let text = "[experiment]\nid = \"rate_stable_stable\"\nseed = 9\n[mc]\nn_paths = 500\n";
        let c = ExperimentConfig::load(text, &["mc.dt=0.02".into(), "grid.alpha=[1.25, 1.35, 1.4, 1.45]".into()]).unwrap();
        assert_eq!(c.experiment.seed, 9);
        assert_eq!(c.mc.n_paths, 500);
        assert_eq!(c.mc.dt, 0.02);
        assert_eq!(c.grid.alpha, vec![1.25, 1.35, 1.4, 1.45]);
        assert_eq!(c.grid.vartheta, vec![1.5]);
        let c = ExperimentConfig::load(text, &["experiment.model=multiplicative".into()]).unwrap();
        assert_eq!(c.experiment.model, "multiplicative");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = "[experiment]\nid = \"rate_vs_brownian\"\n";
        for o in ["grid.alpha=[0.9, 1.5]", "grid.dims=[0]", "mc.dt=0", "mc.typo=1", "experiment.model=\"nope\"", "grid.times=[0.015]"] {
            assert!(matches!(ExperimentConfig::load(base, &[o.into()]), Err(HarnessError::Config(_))), "{o}");
        }
        assert!(ExperimentConfig::load("[experiment]\nid = \"bogus\"\n", &[]).is_err());
        assert!(ExperimentConfig::load("not toml [", &[]).is_err());
    }
}
