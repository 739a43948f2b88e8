//! Full blended generation: resolves a [`BlendConfig`] into per-step,
//! per-block conditioning, drives the backend and records an auditable
//! manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    BackendDescriptor, BlockConditioning, BlockUsage, DiffusionBackend, Image, Latent, NoiseTrajectoryState,
    DEFAULT_GUIDANCE, DEFAULT_STEPS,
};
use crate::embedding_blend::{interpolate, PromptEmbedding, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::schedule::{
    make_alternate_schedule, make_constant_schedule, make_ratio_schedule, make_switch_schedule, ratio_count,
    ConditioningSchedule, PromptSelector,
};
use crate::unet_routing::{split_from_ratio, BlockId, BlockSplit, BLOCK_COUNT};

pub const DEFAULT_RATIO: f64 = DEFAULT_ALPHA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlendMethod {
    Textual,
    Switch,
    Alternate,
    Unet,
    Baseline,
}

impl BlendMethod {
    /// The four blending methods, in the order used for tables and grids.
    pub const BLENDS: [BlendMethod; 4] = [
        BlendMethod::Textual,
        BlendMethod::Switch,
        BlendMethod::Alternate,
        BlendMethod::Unet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlendMethod::Textual => "TEXTUAL",
            BlendMethod::Switch => "SWITCH",
            BlendMethod::Alternate => "ALTERNATE",
            BlendMethod::Unet => "UNET",
            BlendMethod::Baseline => "BASELINE",
        }
    }

    /// Lower-case form used in directory names and CLI flags.
    pub fn slug(self) -> &'static str {
        match self {
            BlendMethod::Textual => "textual",
            BlendMethod::Switch => "switch",
            BlendMethod::Alternate => "alternate",
            BlendMethod::Unet => "unet",
            BlendMethod::Baseline => "baseline",
        }
    }

    /// Index among [`BlendMethod::BLENDS`], `None` for the baseline.
    pub fn blend_index(self) -> Option<usize> {
        BlendMethod::BLENDS.iter().position(|&m| m == self)
    }
}

impl fmt::Display for BlendMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlendMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TEXTUAL" => Ok(BlendMethod::Textual),
            "SWITCH" => Ok(BlendMethod::Switch),
            "ALTERNATE" => Ok(BlendMethod::Alternate),
            "UNET" => Ok(BlendMethod::Unet),
            "BASELINE" => Ok(BlendMethod::Baseline),
            _ => Err(Error::Parse(format!("unknown blend method {s:?}"))),
        }
    }
}

/// Full recipe for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub method: BlendMethod,
    pub prompt_1: String,
    /// Empty for [`BlendMethod::Baseline`].
    pub prompt_2: String,
    /// Intended share of the first prompt, `alpha` in `[0, 1]`.
    pub ratio: f64,
    pub seed: u64,
    pub steps: usize,
    pub guidance: f64,
    /// SWITCH override: number of initial iterations on the first prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_step: Option<usize>,
    /// ALTERNATE override: P1 on iterations `i % period == 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    /// UNET override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<BlockSplit>,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            method: BlendMethod::Textual,
            prompt_1: String::new(),
            prompt_2: String::new(),
            ratio: DEFAULT_RATIO,
            seed: 0,
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            switch_step: None,
            period: None,
            split: None,
        }
    }
}

impl BlendConfig {
    pub fn new(method: BlendMethod, prompt_1: impl Into<String>, prompt_2: impl Into<String>) -> Self {
        Self {
            method,
            prompt_1: prompt_1.into(),
            prompt_2: prompt_2.into(),
            ..Self::default()
        }
    }

    pub fn baseline(prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            seed,
            ..Self::new(BlendMethod::Baseline, prompt, "")
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_guidance(mut self, guidance: f64) -> Self {
        self.guidance = guidance;
        self
    }

    pub fn with_switch_step(mut self, m: usize) -> Self {
        self.switch_step = Some(m);
        self
    }

    pub fn with_period(mut self, period: usize) -> Self {
        self.period = Some(period);
        self
    }

    pub fn with_split(mut self, split: BlockSplit) -> Self {
        self.split = Some(split);
        self
    }

    /// The same recipe with the two prompts exchanged.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        std::mem::swap(&mut out.prompt_1, &mut out.prompt_2);
        out
    }

    /// Hex SHA-256 of the canonical JSON form; identifies a run for resuming.
    pub fn content_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Checks ranges and that method overrides match the method.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: self.ratio,
                range: "[0, 1]",
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !self.guidance.is_finite() || self.guidance < 0.0 {
            return Err(Error::OutOfRange {
                name: "guidance",
                value: self.guidance,
                range: "[0, inf)",
            });
        }
        let conflict = |flag: &str| {
            Err(Error::InvalidConfig(format!(
                "{flag} does not apply to method {}",
                self.method
            )))
        };
        if self.switch_step.is_some() && self.method != BlendMethod::Switch {
            return conflict("switch step");
        }
        if self.period.is_some() && self.method != BlendMethod::Alternate {
            return conflict("period");
        }
        if self.split.is_some() && self.method != BlendMethod::Unet {
            return conflict("block split");
        }
        if let Some(m) = self.switch_step {
            if m > self.steps {
                return Err(Error::OutOfRange {
                    name: "switch_step",
                    value: m as f64,
                    range: "[0, steps]",
                });
            }
        }
        if let Some(p) = self.period {
            if p < 2 {
                return Err(Error::OutOfRange {
                    name: "period",
                    value: p as f64,
                    range: "[2, inf)",
                });
            }
        }
        match self.method {
            BlendMethod::Baseline if !self.prompt_2.is_empty() => {
                Err(Error::InvalidConfig("BASELINE takes a single prompt".into()))
            }
            BlendMethod::Baseline => Ok(()),
            _ if self.prompt_2.is_empty() => Err(Error::InvalidConfig(format!(
                "{} needs two prompts",
                self.method
            ))),
            _ => Ok(()),
        }
    }

    /// Resolve overrides and ratio defaults into a concrete plan.
    pub fn plan(&self) -> Result<ConditioningPlan> {
        self.validate()?;
        Ok(match self.method {
            BlendMethod::Baseline => {
                ConditioningPlan::Scheduled(make_constant_schedule(self.steps, PromptSelector::P1)?)
            }
            BlendMethod::Textual => ConditioningPlan::Interpolated { alpha: self.ratio },
            BlendMethod::Switch => {
                let m = match self.switch_step {
                    Some(m) => m,
                    None => ratio_count(self.steps, self.ratio)?,
                };
                ConditioningPlan::Scheduled(make_switch_schedule(self.steps, m)?)
            }
            BlendMethod::Alternate => ConditioningPlan::Scheduled(match self.period {
                Some(p) => make_alternate_schedule(self.steps, p)?,
                None => make_ratio_schedule(self.steps, self.ratio)?,
            }),
            BlendMethod::Unet => ConditioningPlan::Routed(match self.split {
                Some(s) => s,
                None => split_from_ratio(self.ratio)?,
            }),
        })
    }
}

/// How a configuration conditions the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditioningPlan {
    /// One interpolated embedding for every step and block.
    Interpolated { alpha: f64 },
    /// Per-step selector applied to all blocks.
    Scheduled(ConditioningSchedule),
    /// Per-block selector applied at every step.
    Routed(BlockSplit),
}

/// Which embedding a block received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    P1,
    P2,
    Interpolated,
}

impl From<PromptSelector> for EmbeddingSource {
    fn from(s: PromptSelector) -> Self {
        match s {
            PromptSelector::P1 => EmbeddingSource::P1,
            PromptSelector::P2 => EmbeddingSource::P2,
        }
    }
}

/// Conditioning record of one denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub blocks: [EmbeddingSource; BLOCK_COUNT],
}

impl StepTrace {
    /// The common source if every block received the same one.
    pub fn uniform_source(&self) -> Option<EmbeddingSource> {
        let first = self.blocks[0];
        self.blocks.iter().all(|&b| b == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub config: BlendConfig,
    /// Per-step selector string for schedule-driven methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    /// `"n-m"` label for UNET.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub seed: u64,
    pub backend: BackendDescriptor,
    pub init_latent_hash: String,
    /// Hex SHA-256 of the final latent bytes.
    pub hash: String,
}

impl GenerationManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub latent: Latent,
    pub image: Image,
    pub trace: Vec<StepTrace>,
    /// Backend instrumentation: `(step, block, embedding fingerprint)` per block per step.
    pub instrumentation: Vec<BlockUsage>,
    pub manifest: GenerationManifest,
}

impl GenerationResult {
    /// Per-step selector string reconstructed from the trace; `None` if any
    /// step mixed sources across blocks or used an interpolated embedding.
    pub fn trace_selector_string(&self) -> Option<String> {
        self.trace
            .iter()
            .map(|t| match t.uniform_source()? {
                EmbeddingSource::P1 => Some('1'),
                EmbeddingSource::P2 => Some('2'),
                EmbeddingSource::Interpolated => None,
            })
            .collect()
    }

    /// Writes `manifest.json` and `image.png` into `dir`, returning the manifest path.
    pub fn write_artifacts(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        self.image.save_png(&dir.join("image.png"))?;
        self.manifest.write(&manifest_path)?;
        Ok(manifest_path)
    }
}

/// Runs one blended generation. Deterministic per `(backend, config)`.
pub fn generate<B: DiffusionBackend + ?Sized>(backend: &mut B, config: &BlendConfig) -> Result<GenerationResult> {
    let plan = config.plan()?;
    let descriptor = backend.descriptor().clone();
    if matches!(plan, ConditioningPlan::Routed(_)) && !descriptor.supports_block_routing() {
        return Err(Error::Unsupported(format!(
            "backend {} cannot condition the seven cross-attention blocks separately",
            descriptor.name
        )));
    }

    let e1 = backend.encode(&config.prompt_1)?;
    let e2 = match config.method {
        BlendMethod::Baseline => e1.clone(),
        _ => backend.encode(&config.prompt_2)?,
    };
    let uncond = backend.uncond_embedding().clone();
    let blended: Option<PromptEmbedding> = match plan {
        ConditioningPlan::Interpolated { alpha } => Some(interpolate(&e1, &e2, alpha)?),
        _ => None,
    };

    let initial = backend.init_latent(config.seed)?;
    let init_latent_hash = initial.content_hash();
    let mut state = NoiseTrajectoryState::begin(initial, config.steps)?;
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let (conditioning, blocks) = match &plan {
            ConditioningPlan::Interpolated { .. } => {
                let e = blended.as_ref().expect("interpolated embedding computed above");
                (BlockConditioning::uniform(e), [EmbeddingSource::Interpolated; BLOCK_COUNT])
            }
            ConditioningPlan::Scheduled(schedule) => {
                let selector = schedule.selector_at(step);
                let e = match selector {
                    PromptSelector::P1 => &e1,
                    PromptSelector::P2 => &e2,
                };
                (BlockConditioning::uniform(e), [selector.into(); BLOCK_COUNT])
            }
            ConditioningPlan::Routed(split) => (
                BlockConditioning::routed(*split, &e1, &e2),
                BlockId::ALL.map(|b| split.selector_for(b).into()),
            ),
        };
        state = backend.denoise_step(state, &conditioning, &uncond, config.guidance)?;
        trace.push(StepTrace { step: step + 1, blocks });
    }

    let (latent, instrumentation) = state.into_parts();
    let image = backend.decode(&latent)?;
    let manifest = GenerationManifest {
        config: config.clone(),
        schedule: match &plan {
            ConditioningPlan::Scheduled(s) => Some(s.selector_string()),
            _ => None,
        },
        split: match &plan {
            ConditioningPlan::Routed(s) => Some(s.label()),
            _ => None,
        },
        seed: config.seed,
        backend: descriptor,
        init_latent_hash,
        hash: latent.content_hash(),
    };
    Ok(GenerationResult {
        latent,
        image,
        trace,
        instrumentation,
        manifest,
    })
}

/// Single-prompt generation, identical to [`generate`] with [`BlendMethod::Baseline`].
pub fn generate_baseline<B: DiffusionBackend + ?Sized>(
    backend: &mut B,
    prompt: &str,
    seed: u64,
) -> Result<GenerationResult> {
    generate(backend, &BlendConfig::baseline(prompt, seed))
}
