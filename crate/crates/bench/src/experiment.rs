//! The `[experiment]` section and the run matrix it expands to.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cake_core::config::Config;
use cake_core::scheduler::RunConfig;
use cake_core::{BandwidthTrace, ClockMode, Codec, CostModel, Mode, ModelProfile, RequestSpec};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    profiles: Vec<String>,
    cost_models: Vec<String>,
    context_lengths: Vec<u32>,
    #[serde(default = "default_chunk_size")]
    chunk_size: u32,
    traces: Vec<String>,
    power_fractions: Vec<f64>,
    #[serde(default = "default_codecs")]
    codecs: Vec<String>,
    #[serde(default = "default_modes")]
    modes: Vec<Mode>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_store_root")]
    store_root: PathBuf,
    #[serde(default = "default_output")]
    output: PathBuf,
}

fn default_chunk_size() -> u32 {
    512
}

fn default_codecs() -> Vec<String> {
    vec!["identity".into()]
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

fn default_store_root() -> PathBuf {
    "store".into()
}

fn default_output() -> PathBuf {
    "results.csv".into()
}

#[derive(Deserialize)]
struct ExperimentFile {
    experiment: ExperimentSection,
}

/// A fully resolved experiment: every name looked up, every list checked.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub core: Config,
    pub profiles: Vec<ModelProfile>,
    pub cost_models: Vec<(String, CostModel)>,
    pub traces: Vec<(String, BandwidthTrace)>,
    pub context_lengths: Vec<u32>,
    pub chunk_size: u32,
    pub power_fractions: Vec<f64>,
    pub codecs: Vec<Codec>,
    pub modes: Vec<Mode>,
    pub clock: ClockMode,
    pub seed: u64,
    pub store_root: PathBuf,
    pub output: PathBuf,
}

/// One point of the cross product. Indices refer to the config's lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub profile: usize,
    pub cost_model: usize,
    pub context_tokens: u32,
    pub trace: usize,
    pub power_fraction: f64,
    pub codec: Codec,
    pub mode: Mode,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new("."))).with_context(|| format!("loading {}", path.display()))
    }

    /// Relative store, output and trace paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let core = Config::from_toml_str(text, base_dir)?;
        let section = toml::from_str::<ExperimentFile>(text)?.experiment;

        ensure_unique("profiles", &section.profiles)?;
        ensure_unique("cost_models", &section.cost_models)?;
        ensure_unique("traces", &section.traces)?;
        ensure_unique("codecs", &section.codecs)?;
        ensure_unique("context_lengths", &section.context_lengths)?;
        ensure_unique("modes", &section.modes.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
        ensure_unique("power_fractions", &section.power_fractions.iter().map(|p| p.to_bits()).collect::<Vec<_>>())?;

        let profiles = section.profiles.iter().map(|n| core.profile(n).cloned()).collect::<Result<Vec<_>, _>>()?;
        let cost_models = section.cost_models.iter().map(|n| Ok((n.clone(), *core.cost_model(n)?))).collect::<Result<Vec<_>>>()?;
        let traces = section.traces.iter().map(|n| Ok((n.clone(), core.trace(n)?.clone()))).collect::<Result<Vec<_>>>()?;
        let codecs =
            section.codecs.iter().map(|c| c.parse::<Codec>().with_context(|| format!("codec {c:?}"))).collect::<Result<Vec<_>>>()?;

        for &t in &section.context_lengths {
            RequestSpec::new(t, section.chunk_size, 1.0).validate().with_context(|| format!("context length {t}"))?;
        }
        for &p in &section.power_fractions {
            ensure!(p > 0.0 && p <= 1.0, "power fraction {p} outside (0, 1]");
        }
        ensure!(
            section.chunk_size <= core.engine.budget_per_step,
            "chunk_size {} exceeds budget_per_step {}",
            section.chunk_size,
            core.engine.budget_per_step
        );

        let config = ExperimentConfig {
            clock: core.engine.clock,
            profiles,
            cost_models,
            traces,
            context_lengths: section.context_lengths,
            chunk_size: section.chunk_size,
            power_fractions: section.power_fractions,
            codecs,
            modes: section.modes,
            seed: section.seed,
            store_root: base_dir.join(section.store_root),
            output: base_dir.join(section.output),
            core,
        };
        if config.matrix().is_empty() {
            bail!("experiment matrix is empty");
        }
        Ok(config)
    }

    /// Every parameter combination, mode varying fastest.
    pub fn matrix(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for profile in 0..self.profiles.len() {
            for cost_model in 0..self.cost_models.len() {
                for &context_tokens in &self.context_lengths {
                    for trace in 0..self.traces.len() {
                        for &power_fraction in &self.power_fractions {
                            for &codec in &self.codecs {
                                for &mode in &self.modes {
                                    cells.push(Cell { profile, cost_model, context_tokens, trace, power_fraction, codec, mode });
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn request(&self, cell: &Cell) -> RequestSpec {
        RequestSpec::new(cell.context_tokens, self.chunk_size, cell.power_fraction)
    }

    pub fn run_config(&self, cell: &Cell) -> RunConfig {
        let (_, cost) = self.cost_models[cell.cost_model];
        let mut rc = RunConfig::new(cost, self.traces[cell.trace].1.clone(), self.clock);
        let engine = &self.core.engine;
        rc.budget_per_step = engine.budget_per_step;
        rc.quantum_bytes = engine.throttle_quantum_bytes;
        rc.decode_ns_per_byte = engine.decode_ns_per_byte;
        rc.jitter_max_us = engine.jitter_max_us;
        rc.jitter_seed = self.seed;
        rc
    }

    /// Stores are split by profile and codec: the same token prefix yields
    /// the same key, but payload size and encoding differ between them.
    pub fn store_dir(&self, profile: &ModelProfile, codec: Codec) -> PathBuf {
        let codec_dir: String = codec.to_string().chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect();
        self.store_root.join(&profile.name).join(codec_dir)
    }
}

fn ensure_unique<T: std::hash::Hash + Eq + std::fmt::Debug>(what: &str, items: &[T]) -> Result<()> {
    ensure!(!items.is_empty(), "experiment.{what} is empty");
    let mut seen = HashSet::new();
    for item in items {
        ensure!(seen.insert(item), "experiment.{what} lists {item:?} twice");
    }
    Ok(())
}
