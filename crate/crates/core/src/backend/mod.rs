//! Diffusion backend contract.
//!
//! A backend supplies the text encoder, a denoiser whose seven cross-attention
//! blocks can each be conditioned on a different embedding, a noise scheduler,
//! and a latent decoder. Classifier-free guidance and the step bookkeeping are
//! shared by every backend through [`DiffusionBackend::denoise_step`].
//!
//! Two realizations exist: [`ToyBackend`], a small bit-deterministic network
//! used for testing and experiments, and the Stable Diffusion v1.4 adapter
//! contract described by [`sd14_descriptor`], which an external crate can
//! implement against real weights.

mod image;
mod toy;

use serde::{Deserialize, Serialize};

use crate::embedding_blend::PromptEmbedding;
use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use crate::unet_routing::{embedding_for_block, BlockId, BlockSplit, BLOCK_COUNT};

pub use self::image::Image;
pub use self::toy::{ToyBackend, TOY_GAMMA_MAX, TOY_WEIGHT_SEED};

pub const DEFAULT_STEPS: usize = 25;
pub const DEFAULT_GUIDANCE: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A latent sample, stored row-major as `[channel][row][column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: LatentShape,
    data: Vec<f64>,
}

impl Latent {
    pub fn new(shape: LatentShape, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::ShapeMismatch("latent shape must be non-empty".into()));
        }
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "latent data has {} values, shape needs {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: LatentShape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.len()])
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_distance(&self, other: &Latent) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian bytes of every value, in storage order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Hex SHA-256 of [`Latent::to_le_bytes`].
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }
}

/// Standard-Gaussian latent from the pinned PRNG chain (see [`crate::rng`]).
pub fn init_latent(seed: u64, shape: LatentShape) -> Result<Latent> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("cannot sample a zero-sized latent".into()));
    }
    Latent::new(shape, GaussianStream::new(seed).fill(shape.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub latent_shape: LatentShape,
    /// `(tokens_length, dim)` of every embedding this backend produces.
    pub embedding_shape: (usize, usize),
    pub block_ids: Vec<BlockId>,
    pub scheduler_name: String,
    pub default_steps: usize,
    pub default_guidance: f64,
}

impl BackendDescriptor {
    /// True when all seven cross-attention blocks can be conditioned separately.
    pub fn supports_block_routing(&self) -> bool {
        BlockId::ALL.iter().all(|b| self.block_ids.contains(b))
    }
}

/// Contract for a Stable Diffusion v1.4 adapter: 512x512 output from a
/// 4x64x64 latent, CLIP ViT-L/14 embeddings (77 x 768) and the UniPC
/// multistep scheduler at 25 steps with guidance 7.5.
pub fn sd14_descriptor() -> BackendDescriptor {
    BackendDescriptor {
        name: "stable-diffusion-v1-4".into(),
        latent_shape: LatentShape::new(4, 64, 64),
        embedding_shape: (77, 768),
        block_ids: BlockId::ALL.to_vec(),
        scheduler_name: "UniPCMultistepScheduler".into(),
        default_steps: DEFAULT_STEPS,
        default_guidance: DEFAULT_GUIDANCE,
    }
}

/// Which embedding each cross-attention block receives during one pass.
#[derive(Debug, Clone, Copy)]
pub struct BlockConditioning<'a> {
    per_block: [&'a PromptEmbedding; BLOCK_COUNT],
}

impl<'a> BlockConditioning<'a> {
    pub fn uniform(embedding: &'a PromptEmbedding) -> Self {
        Self {
            per_block: [embedding; BLOCK_COUNT],
        }
    }

    pub fn routed(split: BlockSplit, e1: &'a PromptEmbedding, e2: &'a PromptEmbedding) -> Self {
        Self {
            per_block: BlockId::ALL.map(|b| embedding_for_block(split, b, e1, e2)),
        }
    }

    pub fn from_blocks(per_block: [&'a PromptEmbedding; BLOCK_COUNT]) -> Self {
        Self { per_block }
    }

    pub fn get(&self, block: BlockId) -> &'a PromptEmbedding {
        self.per_block[block.position()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, &'a PromptEmbedding)> + '_ {
        BlockId::ALL.iter().map(|&b| (b, self.per_block[b.position()]))
    }
}

/// One instrumentation entry: which embedding (by fingerprint) a block
/// consumed in the conditional pass of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockUsage {
    pub step: usize,
    pub block: BlockId,
    pub embedding: u64,
}

/// Scheduler internals carried between steps. Opaque to callers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchedulerState(pub Vec<f64>);

#[derive(Debug, Clone)]
pub struct NoiseTrajectoryState {
    step_index: usize,
    total_steps: usize,
    latent: Latent,
    log: Vec<BlockUsage>,
    pub scheduler: SchedulerState,
}

impl NoiseTrajectoryState {
    pub fn begin(latent: Latent, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidConfig("trajectory needs at least one step".into()));
        }
        if !latent.is_finite() {
            return Err(Error::NonFinite {
                what: "initial latent",
                step: 0,
            });
        }
        Ok(Self {
            step_index: 0,
            total_steps,
            latent,
            log: Vec::with_capacity(total_steps * BLOCK_COUNT),
            scheduler: SchedulerState::default(),
        })
    }

    /// Number of completed steps.
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn is_finished(&self) -> bool {
        self.step_index == self.total_steps
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn into_latent(self) -> Latent {
        self.latent
    }

    pub fn instrumentation(&self) -> &[BlockUsage] {
        &self.log
    }

    pub fn into_parts(self) -> (Latent, Vec<BlockUsage>) {
        (self.latent, self.log)
    }
}

/// `eps_u + s * (eps_c - eps_u)`. At `s == 1` the conditional estimate is
/// returned unchanged.
pub fn guided_noise(uncond: &[f64], cond: &[f64], guidance_scale: f64) -> Vec<f64> {
    if guidance_scale == 1.0 {
        return cond.to_vec();
    }
    uncond
        .iter()
        .zip(cond)
        .map(|(&u, &c)| u + guidance_scale * (c - u))
        .collect()
}

pub trait DiffusionBackend {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Encode a prompt; over-length prompts are an error, never truncated.
    fn encode(&self, text: &str) -> Result<PromptEmbedding>;

    /// The embedding of the empty prompt.
    fn uncond_embedding(&self) -> &PromptEmbedding;

    /// Noise estimate for iteration `step` (0-based) of `total_steps`, with
    /// each cross-attention block conditioned as given.
    fn predict_noise(
        &self,
        latent: &Latent,
        step: usize,
        total_steps: usize,
        conditioning: &BlockConditioning<'_>,
    ) -> Result<Vec<f64>>;

    /// Advance `latent` by one scheduler update given the guided noise estimate.
    fn scheduler_update(
        &self,
        latent: &Latent,
        noise: &[f64],
        step: usize,
        total_steps: usize,
        scheduler: &mut SchedulerState,
    ) -> Result<Latent>;

    fn decode(&self, latent: &Latent) -> Result<Image>;

    fn init_latent(&self, seed: u64) -> Result<Latent> {
        init_latent(seed, self.descriptor().latent_shape)
    }

    /// One guided denoising step. Takes `&mut self` so a backend instance can
    /// never interleave the steps of two trajectories.
    fn denoise_step(
        &mut self,
        mut state: NoiseTrajectoryState,
        conditioning: &BlockConditioning<'_>,
        uncond: &PromptEmbedding,
        guidance_scale: f64,
    ) -> Result<NoiseTrajectoryState> {
        let step = state.step_index;
        if step >= state.total_steps {
            return Err(Error::InvalidConfig(format!(
                "trajectory already finished after {} steps",
                state.total_steps
            )));
        }
        if !guidance_scale.is_finite() {
            return Err(Error::OutOfRange {
                name: "guidance_scale",
                value: guidance_scale,
                range: "finite values",
            });
        }
        let expected = self.descriptor().embedding_shape;
        for (block, emb) in conditioning.iter().chain(std::iter::once((BlockId::B, uncond))) {
            if emb.shape() != expected {
                return Err(Error::ShapeMismatch(format!(
                    "block {block} got embedding {:?}, backend expects {expected:?}",
                    emb.shape()
                )));
            }
        }
        if state.latent.shape() != self.descriptor().latent_shape {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} does not match backend {:?}",
                state.latent.shape(),
                self.descriptor().latent_shape
            )));
        }

        let cond = self.predict_noise(&state.latent, step, state.total_steps, conditioning)?;
        let noise = if guidance_scale == 1.0 {
            cond
        } else {
            let uncond_eps = self.predict_noise(
                &state.latent,
                step,
                state.total_steps,
                &BlockConditioning::uniform(uncond),
            )?;
            guided_noise(&uncond_eps, &cond, guidance_scale)
        };
        let next = self.scheduler_update(&state.latent, &noise, step, state.total_steps, &mut state.scheduler)?;
        if !next.is_finite() {
            return Err(Error::NonFinite {
                what: "latent",
                step: step + 1,
            });
        }
        state.log.extend(conditioning.iter().map(|(block, emb)| BlockUsage {
            step: step + 1,
            block,
            embedding: emb.fingerprint(),
        }));
        state.latent = next;
        state.step_index += 1;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_latent_is_deterministic_per_seed() {
        let shape = LatentShape::new(4, 8, 8);
        let a = init_latent(7, shape).unwrap();
        let b = init_latent(7, shape).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let c = init_latent(0, shape).unwrap();
        let d = init_latent(1, shape).unwrap();
        assert!(c.l2_distance(&d) > 0.0);
    }

    #[test]
    fn zero_sized_latent_is_rejected() {
        assert!(init_latent(0, LatentShape::new(0, 8, 8)).is_err());
        assert!(Latent::new(LatentShape::new(1, 1, 2), vec![0.0]).is_err());
    }

    #[test]
    fn guidance_formula() {
        let u = [1.0, -2.0];
        let c = [3.0, 0.5];
        assert_eq!(guided_noise(&u, &c, 1.0), c.to_vec());
        assert_eq!(guided_noise(&u, &c, 0.0), u.to_vec());
        assert_eq!(guided_noise(&u, &c, 2.0), vec![5.0, 3.0]);
        // identical branches cancel exactly for any scale
        for s in [0.0, 1.0, 3.3, 7.5, 100.0] {
            assert_eq!(guided_noise(&c, &c, s), c.to_vec());
        }
    }

    #[test]
    fn sd14_contract_shapes() {
        let d = sd14_descriptor();
        assert_eq!(d.latent_shape, LatentShape::new(4, 64, 64));
        assert_eq!(d.default_steps, 25);
        assert_eq!(d.default_guidance, 7.5);
        assert!(d.supports_block_routing());
    }
}
