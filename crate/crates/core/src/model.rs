//! Domain types and the analytic cost laws: KV bytes per token, chunk tiling,
//! and per-chunk compute latency.

use serde::Deserialize;
use thiserror::Error;

use crate::time::Micros;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model profile {name:?}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("power fraction must lie in (0, 1], got {0}")]
    InvalidPower(f64),
    #[error("cannot split an empty sequence")]
    EmptySequence,
    #[error("chunk size must be at least one token")]
    ZeroChunkSize,
}

/// Per-model constants that determine KV-cache bytes per token.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub n_layers: u32,
    pub hidden_size: u32,
    pub precision_bytes: u32,
    #[serde(default = "default_kv_multiplier")]
    pub kv_multiplier: u32,
    #[serde(default)]
    pub per_token_bytes_override: Option<u64>,
}

fn default_kv_multiplier() -> u32 {
    2
}

impl ModelProfile {
    pub fn new(name: &str, n_layers: u32, hidden_size: u32, precision_bytes: u32) -> Self {
        ModelProfile { name: name.to_string(), n_layers, hidden_size, precision_bytes, kv_multiplier: 2, per_token_bytes_override: None }
    }

    /// LongAlpaca-7B: 32 layers, hidden 4096, fp16.
    pub fn longalpaca_7b() -> Self {
        Self::new("longalpaca-7b", 32, 4096, 2)
    }

    /// LongAlpaca-13B: 40 layers, hidden 5120, fp16.
    pub fn longalpaca_13b() -> Self {
        Self::new("longalpaca-13b", 40, 5120, 2)
    }

    /// A profile whose per-token size is given directly.
    pub fn with_bytes_per_token(name: &str, bytes: u64) -> Self {
        ModelProfile { per_token_bytes_override: Some(bytes), ..Self::new(name, 1, 1, 2) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| Err(ModelError::InvalidProfile { name: self.name.clone(), reason: reason.to_string() });
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1");
        }
        if ![1, 2, 4].contains(&self.precision_bytes) {
            return bad("precision_bytes must be 1, 2 or 4");
        }
        if self.kv_multiplier == 0 {
            return bad("kv_multiplier must be >= 1");
        }
        if self.per_token_bytes_override == Some(0) {
            return bad("per_token_bytes_override must be > 0");
        }
        Ok(())
    }
}

/// Size of one token's KV cache across all layers.
pub fn kv_bytes_per_token(profile: &ModelProfile) -> u64 {
    profile.per_token_bytes_override.unwrap_or_else(|| {
        profile.kv_multiplier as u64 * profile.n_layers as u64 * profile.hidden_size as u64 * profile.precision_bytes as u64
    })
}

/// KV bytes of a chunk; linear in its token count, independent of position.
pub fn chunk_bytes(profile: &ModelProfile, chunk: &ChunkSpec) -> u64 {
    kv_bytes_per_token(profile) * chunk.token_count as u64
}

/// One prefill request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestSpec {
    pub total_tokens: u32,
    pub chunk_size: u32,
    pub batch_size: u32,
    pub power_fraction: f64,
}

impl RequestSpec {
    pub fn new(total_tokens: u32, chunk_size: u32, power_fraction: f64) -> Self {
        RequestSpec { total_tokens, chunk_size, batch_size: 1, power_fraction }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.chunk_size == 0 || self.chunk_size > self.total_tokens {
            return Err(ModelError::InvalidRequest(format!(
                "chunk_size {} must lie in [1, total_tokens={}]",
                self.chunk_size, self.total_tokens
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidRequest("batch_size must be >= 1".into()));
        }
        check_power(self.power_fraction)
    }

    pub fn chunks(&self) -> Result<Vec<ChunkSpec>, ModelError> {
        split_into_chunks(self.total_tokens, self.chunk_size)
    }
}

/// A contiguous token range of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkSpec {
    pub index: usize,
    pub token_start: u32,
    pub token_count: u32,
}

impl ChunkSpec {
    pub fn token_end(&self) -> u32 {
        self.token_start + self.token_count
    }
}

/// Tiles `[0, total_tokens)` with chunks of `chunk_size`; only the last may be short.
pub fn split_into_chunks(total_tokens: u32, chunk_size: u32) -> Result<Vec<ChunkSpec>, ModelError> {
    if total_tokens == 0 {
        return Err(ModelError::EmptySequence);
    }
    if chunk_size == 0 {
        return Err(ModelError::ZeroChunkSize);
    }
    let chunks = (0..total_tokens)
        .step_by(chunk_size as usize)
        .enumerate()
        .map(|(index, token_start)| ChunkSpec { index, token_start, token_count: chunk_size.min(total_tokens - token_start) })
        .collect();
    Ok(chunks)
}

/// Affine per-chunk compute law: a fixed step overhead plus a slope over the
/// number of tokens already in the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CostModel {
    pub alpha_ms: f64,
    pub beta_ms_per_token: f64,
    #[serde(default = "default_reference_chunk")]
    pub reference_chunk_size: u32,
}

fn default_reference_chunk() -> u32 {
    512
}

impl CostModel {
    pub fn new(alpha_ms: f64, beta_ms_per_token: f64) -> Self {
        CostModel { alpha_ms, beta_ms_per_token, reference_chunk_size: 512 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha_ms >= 0.0 && self.alpha_ms.is_finite()) {
            return Err(ModelError::InvalidCostModel(format!("alpha_ms = {}", self.alpha_ms)));
        }
        if !(self.beta_ms_per_token >= 0.0 && self.beta_ms_per_token.is_finite()) {
            return Err(ModelError::InvalidCostModel(format!("beta_ms_per_token = {}", self.beta_ms_per_token)));
        }
        if self.reference_chunk_size == 0 {
            return Err(ModelError::InvalidCostModel("reference_chunk_size = 0".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_power(power_fraction: f64) -> Result<(), ModelError> {
    if power_fraction > 0.0 && power_fraction <= 1.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidPower(power_fraction))
    }
}

/// Step latency of `chunk` when the request holds `power_fraction` of the GPU.
///
/// `(alpha + beta * token_start) * (token_count / reference_chunk_size) / power_fraction`,
/// rounded to the nearest microsecond.
pub fn compute_latency(model: &CostModel, chunk: &ChunkSpec, power_fraction: f64) -> Result<Micros, ModelError> {
    check_power(power_fraction)?;
    let per_step = model.alpha_ms + model.beta_ms_per_token * chunk.token_start as f64;
    let length_scale = chunk.token_count as f64 / model.reference_chunk_size as f64;
    Ok(Micros::from_ms(per_step * length_scale / power_fraction))
}
