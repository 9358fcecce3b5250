//! Structured configuration: model profiles, cost-model calibrations,
//! bandwidth traces and engine knobs, read from a TOML file.
//!
//! ```toml
//! [[profile]]
//! name = "longalpaca-7b"
//! n_layers = 32
//! hidden_size = 4096
//! precision_bytes = 2
//!
//! [cost_model.a100-like]
//! alpha_ms = 60.0
//! beta_ms_per_token = 0.005
//!
//! [trace.bw2000]
//! constant_mbps = 2000
//!
//! [trace.step-down]
//! breakpoints = [[0, 10000], [2000, 2000]]
//!
//! [engine]
//! clock = "sim"
//! throttle_quantum_bytes = 4194304
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::clock::ClockMode;
use crate::model::{CostModel, ModelError, ModelProfile};
use crate::scheduler::RunConfig;
use crate::trace::{BandwidthTrace, TraceError};
use crate::transfer::DEFAULT_QUANTUM_BYTES;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("profile {name:?}: {source}")]
    Profile { name: String, source: ModelError },
    #[error("cost model {name:?}: {source}")]
    CostModel { name: String, source: ModelError },
    #[error("trace {name:?}: {source}")]
    Trace { name: String, source: TraceError },
    #[error("trace {0:?} must set exactly one of constant_mbps, breakpoints, csv")]
    TraceShape(String),
    #[error("duplicate profile name {0:?}")]
    DuplicateProfile(String),
    #[error("no {kind} named {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error("engine: {0}")]
    Engine(String),
}

/// How a named trace is described in the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub constant_mbps: Option<f64>,
    /// `[time_ms, mbps]` pairs.
    pub breakpoints: Option<Vec<(f64, f64)>>,
    /// Two-column CSV, resolved against the config file's directory.
    pub csv: Option<PathBuf>,
}

impl TraceSpec {
    pub fn resolve(&self, name: &str, base_dir: &Path) -> Result<BandwidthTrace, ConfigError> {
        let wrap = |source| ConfigError::Trace { name: name.to_owned(), source };
        match (self.constant_mbps, &self.breakpoints, &self.csv) {
            (Some(mbps), None, None) => BandwidthTrace::constant(mbps).map_err(wrap),
            (None, Some(points), None) => BandwidthTrace::from_pairs(points).map_err(wrap),
            (None, None, Some(path)) => BandwidthTrace::from_csv_path(&base_dir.join(path)).map_err(wrap),
            _ => Err(ConfigError::TraceShape(name.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub clock: ClockMode,
    pub throttle_quantum_bytes: u64,
    pub decode_ns_per_byte: f64,
    pub budget_per_step: u32,
    pub jitter_max_us: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            clock: ClockMode::Sim,
            throttle_quantum_bytes: DEFAULT_QUANTUM_BYTES,
            decode_ns_per_byte: 0.0,
            budget_per_step: 512,
            jitter_max_us: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
struct RawConfig {
    #[serde(default, rename = "profile")]
    profiles: Vec<ModelProfile>,
    #[serde(default, rename = "cost_model")]
    cost_models: BTreeMap<String, CostModel>,
    #[serde(default, rename = "trace")]
    traces: BTreeMap<String, TraceSpec>,
    #[serde(default)]
    engine: EngineSection,
}

/// A validated configuration with every trace loaded.
#[derive(Debug, Clone)]
pub struct Config {
    pub profiles: Vec<ModelProfile>,
    pub cost_models: BTreeMap<String, CostModel>,
    pub traces: BTreeMap<String, BandwidthTrace>,
    pub engine: EngineSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a config held in memory; relative CSV trace paths are taken
    /// from `base_dir`. Unknown top-level tables are ignored so callers can
    /// keep their own sections in the same file.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &raw.profiles {
            p.validate().map_err(|source| ConfigError::Profile { name: p.name.clone(), source })?;
            if !seen.insert(p.name.clone()) {
                return Err(ConfigError::DuplicateProfile(p.name.clone()));
            }
        }
        for (name, c) in &raw.cost_models {
            c.validate().map_err(|source| ConfigError::CostModel { name: name.clone(), source })?;
        }
        let traces = raw
            .traces
            .iter()
            .map(|(name, spec)| Ok((name.clone(), spec.resolve(name, base_dir)?)))
            .collect::<Result<BTreeMap<_, _>, ConfigError>>()?;
        let engine = raw.engine;
        if engine.throttle_quantum_bytes == 0 {
            return Err(ConfigError::Engine("throttle_quantum_bytes must be positive".into()));
        }
        if engine.budget_per_step == 0 {
            return Err(ConfigError::Engine("budget_per_step must be positive".into()));
        }
        if !(engine.decode_ns_per_byte.is_finite() && engine.decode_ns_per_byte >= 0.0) {
            return Err(ConfigError::Engine(format!("decode_ns_per_byte = {}", engine.decode_ns_per_byte)));
        }
        Ok(Config { profiles: raw.profiles, cost_models: raw.cost_models, traces, engine })
    }

    pub fn profile(&self, name: &str) -> Result<&ModelProfile, ConfigError> {
        self.profiles.iter().find(|p| p.name == name).ok_or_else(|| ConfigError::Unknown { kind: "profile", name: name.to_owned() })
    }

    pub fn cost_model(&self, name: &str) -> Result<&CostModel, ConfigError> {
        self.cost_models.get(name).ok_or_else(|| ConfigError::Unknown { kind: "cost model", name: name.to_owned() })
    }

    pub fn trace(&self, name: &str) -> Result<&BandwidthTrace, ConfigError> {
        self.traces.get(name).ok_or_else(|| ConfigError::Unknown { kind: "trace", name: name.to_owned() })
    }

    /// Run settings for one (cost model, trace) pair with the engine knobs applied.
    pub fn run_config(&self, cost_model: &str, trace: &str) -> Result<RunConfig, ConfigError> {
        let mut rc = RunConfig::new(*self.cost_model(cost_model)?, self.trace(trace)?.clone(), self.engine.clock);
        rc.budget_per_step = self.engine.budget_per_step;
        rc.quantum_bytes = self.engine.throttle_quantum_bytes;
        rc.decode_ns_per_byte = self.engine.decode_ns_per_byte;
        rc.jitter_max_us = self.engine.jitter_max_us;
        Ok(rc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::kv_bytes_per_token;

    const SAMPLE: &str = r#"
[[profile]]
name = "longalpaca-7b"
n_layers = 32
hidden_size = 4096
precision_bytes = 2

[[profile]]
name = "llama3-70b"
n_layers = 80
hidden_size = 8192
precision_bytes = 2
per_token_bytes_override = 2500000

[cost_model.a100-like]
alpha_ms = 60.0
beta_ms_per_token = 0.005

[trace.bw2000]
constant_mbps = 2000

[trace.step]
breakpoints = [[0, 1000], [1000, 4000]]

[engine]
clock = "live"
decode_ns_per_byte = 0.5

[experiment]
ignored = true
"#;

    #[test]
    fn parses_every_section() {
        let cfg = Config::from_toml_str(SAMPLE, Path::new(".")).unwrap();
        assert_eq!(kv_bytes_per_token(cfg.profile("longalpaca-7b").unwrap()), 524_288);
        assert_eq!(kv_bytes_per_token(cfg.profile("llama3-70b").unwrap()), 2_500_000);
        let cost = cfg.cost_model("a100-like").unwrap();
        assert_eq!(cost.reference_chunk_size, 512);
        assert!(cfg.trace("bw2000").unwrap().is_constant());
        assert_eq!(cfg.trace("step").unwrap().breakpoints().len(), 2);
        assert_eq!(cfg.engine.clock, ClockMode::Live);
        assert_eq!(cfg.engine.throttle_quantum_bytes, DEFAULT_QUANTUM_BYTES);

        let rc = cfg.run_config("a100-like", "step").unwrap();
        assert_eq!(rc.clock, ClockMode::Live);
        assert_eq!(rc.decode_ns_per_byte, 0.5);
        assert!(matches!(cfg.run_config("h100-like", "step"), Err(ConfigError::Unknown { .. })));
    }

    #[test]
    fn csv_traces_resolve_against_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("t.csv"), "time_ms,mbps\n0,2000\n500,5000\n").unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[trace.file]\ncsv = \"t.csv\"\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.trace("file").unwrap().breakpoints().len(), 2);
    }

    #[test]
    fn rejects_invalid_input() {
        let base = Path::new(".");
        let bad = [
            "[trace.x]\nconstant_mbps = 100\nbreakpoints = [[0, 1]]\n",
            "[trace.x]\n",
            "[trace.x]\nconstant_mbps = 0\n",
            "[cost_model.c]\nalpha_ms = -1.0\nbeta_ms_per_token = 0.0\n",
            "[[profile]]\nname = \"p\"\nn_layers = 0\nhidden_size = 1\nprecision_bytes = 2\n",
            "[[profile]]\nname = \"p\"\nn_layers = 1\nhidden_size = 1\nprecision_bytes = 2\n[[profile]]\nname = \"p\"\nn_layers = 1\nhidden_size = 1\nprecision_bytes = 2\n",
            "[engine]\nthrottle_quantum_bytes = 0\n",
            "[engine]\nclock = \"wall\"\n",
            "[engine]\nbogus = 1\n",
        ];
        for text in bad {
            assert!(Config::from_toml_str(text, base).is_err(), "accepted:\n{text}");
        }
    }
}
