//! Trace-driven emulation of NetFlow-style packet sampling, flow export and
//! simple inversion, with the statistics needed to measure how far the
//! sampled view drifts from the original traffic.
//!
//! The pipeline is: a packet trace ([`trace`], or [`synthetic`]) is sampled
//! ([`sampler`]), both streams are classified into flows ([`flow_cache`]),
//! per-bin rates are inverted ([`inversion`]) and compared ([`stats`]), and
//! flow/packet size distributions are tested against each other
//! ([`distributions`]). [`experiment`] wires the stages into a single run.

pub mod distributions;
pub mod error;
pub mod experiment;
pub mod flow_cache;
pub mod inversion;
pub mod sampler;
pub mod stats;
pub mod synthetic;
pub mod trace;

pub use error::{Error, Result};
pub use flow_cache::{build_flows, CacheConfig, ExportReason, FlowCache, FlowRecord};
pub use sampler::SamplingSpec;
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use trace::{read_trace, write_trace, FlowKey, PacketRecord};
