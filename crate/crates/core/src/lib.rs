//! Streaming KV-cache management for autoregressive video diffusion: a
//! persistent attention sink kept temporally adjacent to the live window via
//! rotary phase re-alignment, plus importance-ranked token eviction that
//! compresses the cache back to budget whenever the window fills.
//!
//! The crate also ships a synthetic rollout simulator and a CLI
//! (`framepress`) that measure retained attention mass, selection behavior,
//! and cache dynamics under the primary policy and a family of rolling
//! baselines.

pub mod attention;
pub mod cache;
pub mod cli;
pub mod error;
pub mod policy;
pub mod rope;
pub mod simulator;

pub use cache::{CacheBank, CachePolicyConfig, LayerCache, PolicyKind};
pub use error::{Error, Result};
pub use policy::{participative_compress, policy_step, CompressionReport};
pub use rope::{build_frequencies, DimSplit, RopeFrequencies, TokenPosition};
pub use simulator::{rollout, RolloutOptions, RolloutTrace, StreamModel};
