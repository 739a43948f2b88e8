//! Zero-shot concept blending for latent diffusion pipelines.
//!
//! Four strategies mix two prompts into one generation:
//!
//! - **TEXTUAL**: linear interpolation of the two prompt embeddings.
//! - **SWITCH**: condition on the first prompt for the initial iterations, then on the second.
//! - **ALTERNATE**: interleave the two prompts across denoising iterations.
//! - **UNET**: route each of the seven cross-attention blocks to one of the two prompts.
//!
//! The [`backend`] module defines the diffusion backend contract and a small,
//! bit-deterministic toy realization. [`pipeline`] drives a full generation and
//! emits an auditable manifest, [`experiments`] holds the concept-pair registry
//! and batch presets, and [`study_stats`] implements the preference statistics
//! used to analyse ranking studies.

pub mod backend;
pub mod embedding_blend;
pub mod error;
pub mod experiments;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod study_stats;
pub mod unet_routing;

pub use backend::{BackendDescriptor, DiffusionBackend, Image, Latent, LatentShape, ToyBackend};
pub use embedding_blend::{interpolate, PromptEmbedding};
pub use error::{Error, Result};
pub use pipeline::{generate, generate_baseline, BlendConfig, BlendMethod, GenerationResult};
pub use schedule::{ConditioningSchedule, PromptSelector};
pub use unet_routing::{BlockId, BlockSplit};
