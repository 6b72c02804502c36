//! Experiment config files and reproducibility manifests.
//!
//! A config is TOML with four tables:
//!
//! ```toml
//! [problem]
//! kind = "quadratic"          # quadratic | pseudo_huber | smooth_rastrigin | least_squares
//! spectrum = [1.0, 4.0]
//!
//! [oracle]
//! kind = "gaussian"           # gaussian (sigma) | relative (eta) | minibatch (batch, without_replacement)
//! sigma = 0.5
//!
//! [schedule]
//! alpha_c = 1.0               # alpha_k = alpha_c * k^(-alpha_a)
//! alpha_a = 0.7
//! mu_m = 1.0                  # mu_k = mu_m * k^(-mu_b), optional
//! mu_b = 0.0
//!
//! [run]
//! method = "msgd"             # vsgd | msgd | msgd-classical | nasgd | nesterov-classical
//! horizon = 100000
//! replicas = 200
//! seed = 7
//! x0 = [1.0, 1.0]
//! checkpoints = "log"         # geometric (tail) | log (per_decade) | paired (per_decade)
//!                             # | every (stride) | paired_every (stride)
//! per_decade = 10
//! lyapunov = true
//! averaged = false
//! ```
//!
//! Overrides `section.key=value` are applied to the parsed tables before
//! validation; `value` is read as a TOML value, or as a string if that fails.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{ExperimentConfig, OracleSpec, ProblemSpec};
use crate::optimizers::{CheckpointPlan, Method};
use crate::schedules::PowerSchedule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("override {0:?} must look like section.key=value")]
    Override(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    problem: ProblemSpec,
    oracle: OracleSpec,
    schedule: RawSchedule,
    run: RawRun,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    alpha_c: f64,
    alpha_a: f64,
    #[serde(default)]
    mu_m: f64,
    #[serde(default)]
    mu_b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    method: String,
    beta: Option<f64>,
    horizon: u64,
    replicas: usize,
    seed: u64,
    x0: Vec<f64>,
    #[serde(default = "default_plan")]
    checkpoints: String,
    per_decade: Option<u32>,
    tail: Option<u64>,
    stride: Option<u64>,
    #[serde(default)]
    lyapunov: bool,
    #[serde(default)]
    averaged: bool,
    #[serde(default)]
    x0_jitter: f64,
}

fn default_plan() -> String {
    "geometric".into()
}

fn parse_method(name: &str, beta: Option<f64>) -> Result<Method, ConfigError> {
    let needs_beta = || {
        beta.ok_or_else(|| ConfigError::Invalid(format!("method {name} needs run.beta in [0, 1)")))
    };
    let m = match name {
        "vsgd" => Method::Vsgd,
        "msgd" => Method::Msgd,
        "nasgd" => Method::Nasgd,
        "msgd-classical" => Method::MsgdClassical { beta: needs_beta()? },
        "nesterov-classical" => Method::NesterovClassical { beta: needs_beta()? },
        other => return Err(ConfigError::Invalid(format!("unknown method {other:?}"))),
    };
    if let Method::MsgdClassical { beta } | Method::NesterovClassical { beta } = m {
        if !(0.0..1.0).contains(&beta) {
            return Err(ConfigError::Invalid(format!("run.beta must lie in [0, 1), got {beta}")));
        }
    }
    Ok(m)
}

fn parse_plan(run: &RawRun) -> Result<CheckpointPlan, ConfigError> {
    let plan = match run.checkpoints.as_str() {
        "geometric" => CheckpointPlan::Geometric {
            tail: run.tail.unwrap_or(8),
        },
        "log" => CheckpointPlan::Log {
            per_decade: run.per_decade.unwrap_or(10),
        },
        "paired" => CheckpointPlan::Paired {
            per_decade: run.per_decade.unwrap_or(10),
        },
        "every" => CheckpointPlan::Every {
            stride: run
                .stride
                .ok_or_else(|| ConfigError::Invalid("checkpoints = \"every\" needs run.stride".into()))?,
        },
        "paired_every" => CheckpointPlan::PairedEvery {
            stride: run
                .stride
                .ok_or_else(|| ConfigError::Invalid("checkpoints = \"paired_every\" needs run.stride".into()))?,
        },
        other => return Err(ConfigError::Invalid(format!("unknown checkpoint plan {other:?}"))),
    };
    plan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(plan)
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let (section, key) = path.trim().split_once('.').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    if section.is_empty() || key.is_empty() {
        return Err(ConfigError::Override(assignment.into()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(ConfigError::Override(assignment.into())),
    }
}

/// Parses config text, applies overrides, and validates the result.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let raw: RawFile = table.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let schedule = PowerSchedule::new(raw.schedule.alpha_c, raw.schedule.alpha_a, raw.schedule.mu_m, raw.schedule.mu_b)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let cfg = ExperimentConfig {
        method: parse_method(&raw.run.method, raw.run.beta)?,
        problem: raw.problem,
        oracle: raw.oracle,
        schedule,
        x0: raw.run.x0.clone(),
        horizon: raw.run.horizon,
        replicas: raw.run.replicas,
        master_seed: raw.run.seed,
        checkpoints: parse_plan(&raw.run)?,
        lyapunov: raw.run.lyapunov,
        averaged: raw.run.averaged,
        x0_jitter: raw.run.x0_jitter,
    };
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, overrides)
}

/// The fully resolved config of a finished experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        m.config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[problem]
kind = "quadratic"
spectrum = [1.0, 4.0]

[oracle]
kind = "gaussian"
sigma = 0.5

[schedule]
alpha_c = 1.0
alpha_a = 0.7
mu_m = 1.0

[run]
method = "msgd"
horizon = 1000
replicas = 4
seed = 7
x0 = [1.0, 1.0]
checkpoints = "paired"
per_decade = 4
lyapunov = true
"#;

    #[test]
    fn parses_sample() {
        let cfg = parse_config(SAMPLE, &[]).unwrap();
        assert_eq!(cfg.method, Method::Msgd);
        assert_eq!(cfg.schedule, PowerSchedule::new(1.0, 0.7, 1.0, 0.0).unwrap());
        assert_eq!(cfg.checkpoints, CheckpointPlan::Paired { per_decade: 4 });
        assert!(cfg.lyapunov && !cfg.averaged);
        assert_eq!(cfg.oracle, OracleSpec::Gaussian { sigma: 0.5 });
    }

    #[test]
    fn overrides_apply_after_parsing() {
        let cfg = parse_config(
            SAMPLE,
            &["run.seed=99".into(), "oracle.sigma=0".into(), "run.method=vsgd".into()],
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 99);
        assert_eq!(cfg.oracle, OracleSpec::Gaussian { sigma: 0.0 });
        assert_eq!(cfg.method, Method::Vsgd);
        assert!(matches!(parse_config(SAMPLE, &["seed=1".into()]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn rejects_damped_method_without_damping() {
        let err = parse_config(SAMPLE, &["schedule.mu_m=0".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(ref m) if m.contains("mu_m")), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_methods() {
        assert!(matches!(
            parse_config(SAMPLE, &["run.colour=1".into()]),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(
            parse_config(SAMPLE, &["run.method=adam".into()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config(SAMPLE, &["run.method=msgd-classical".into()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(parse_config("not toml [", &[]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = parse_config(SAMPLE, &["oracle.sigma=0.1".into()]).unwrap();
        let m = Manifest::new(&cfg);
        let back = Manifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
