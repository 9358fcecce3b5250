//! Bidirectional KV-cache acquisition for long-prompt prefill.
//!
//! A request's prompt is split into fixed-size token chunks. A compute worker
//! prefills chunks front to back while a fetch worker streams stored KV cache
//! back to front from a content-addressed chunk store; the two meet at a merge
//! point that adapts to the available GPU share and I/O bandwidth.
//!
//! The crate carries the cost laws ([`model`], [`trace`]), the chunk store
//! ([`store`]), codecs ([`codec`]), both workers ([`compute`], [`transfer`])
//! and the scheduler that ties them together ([`scheduler`]).

pub mod clock;
pub mod codec;
pub mod compute;
pub mod config;
pub mod model;
pub mod scheduler;
pub mod store;
pub mod time;
pub mod trace;
pub mod transfer;

pub use clock::ClockMode;
pub use codec::Codec;
pub use model::{chunk_bytes, compute_latency, kv_bytes_per_token, split_into_chunks, ChunkSpec, CostModel, ModelProfile, RequestSpec};
pub use scheduler::{run, Mode, RunConfig, RunPlan, RunReport, Side};
pub use store::{chain_hash, populate, ChunkKey, ChunkStore};
pub use time::Micros;
pub use trace::{fetch_latency, BandwidthTrace};
