//! Bit-deterministic toy backend.
//!
//! Small enough to run a 25-step guided generation in about a millisecond,
//! while keeping the structure blending needs: a token-level text encoder and
//! a U-Net-shaped denoiser with three encoder stages, a bottleneck and three
//! decoder stages, each ending in single-head cross-attention over the prompt
//! tokens, plus encoder-to-decoder skip connections.
//!
//! All weights come from [`GaussianStream`] seeded with [`TOY_WEIGHT_SEED`],
//! drawn in this order and scaled by `1/sqrt(fan_in)`:
//! BOS, EOS and PAD token vectors; position table; input projection; time
//! projection; then per stage (E0..D2) the mixing matrix, mixing bias,
//! query, key, value and output projections; finally the output projection.
//!
//! Scheduler: `x <- x - gamma_i * eps` with
//! `gamma_i = TOY_GAMMA_MAX * (T - i) / T` for iteration `i = 0..T`.

use crate::backend::{BackendDescriptor, BlockConditioning, DiffusionBackend, Image, Latent, LatentShape, SchedulerState};
use crate::embedding_blend::PromptEmbedding;
use crate::error::{Error, Result};
use crate::rng::{seed_from_bytes, GaussianStream};
use crate::unet_routing::{BlockId, BLOCK_COUNT};

pub const TOY_WEIGHT_SEED: u64 = 0x00C0_FFEE_B1E4_D5EE;
pub const TOY_GAMMA_MAX: f64 = 0.1;

const TOKENS: usize = 16;
const EMBED_DIM: usize = 16;
const CHANNELS: usize = 4;
const SIDE: usize = 8;
const POSITIONS: usize = SIDE * SIDE;
const HIDDEN: usize = 8;
const TIME_FEATURES: usize = 4;
const UPSCALE: usize = 8;

/// Approximate latent-to-RGB projection (rows R, G, B; columns = latent channels).
const DECODE_MATRIX: [[f64; CHANNELS]; 3] = [
    [0.298, 0.187, -0.158, -0.184],
    [0.207, 0.286, 0.189, -0.271],
    [0.208, 0.173, 0.264, -0.473],
];

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn draw(stream: &mut GaussianStream, rows: usize, cols: usize, scale: f64) -> Self {
        let data = stream.fill(rows * cols).into_iter().map(|v| v * scale).collect();
        Self { rows, cols, data }
    }

    fn glorot(stream: &mut GaussianStream, rows: usize, cols: usize) -> Self {
        Self::draw(stream, rows, cols, 1.0 / (cols as f64).sqrt())
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
struct Stage {
    mix: Matrix,
    mix_bias: Vec<f64>,
    query: Matrix,
    key: Matrix,
    value: Matrix,
    out: Matrix,
}

#[derive(Debug, Clone)]
struct ToyWeights {
    bos: Vec<f64>,
    eos: Vec<f64>,
    pad: Vec<f64>,
    positions: Vec<f64>,
    input: Matrix,
    time: Matrix,
    stages: Vec<Stage>,
    output: Matrix,
}

impl ToyWeights {
    fn generate(seed: u64) -> Self {
        let mut g = GaussianStream::new(seed);
        let bos = g.fill(EMBED_DIM);
        let eos = g.fill(EMBED_DIM);
        let pad = g.fill(EMBED_DIM);
        let positions = g.fill(TOKENS * EMBED_DIM);
        let input = Matrix::glorot(&mut g, HIDDEN, CHANNELS);
        let time = Matrix::glorot(&mut g, HIDDEN, TIME_FEATURES);
        let stages = (0..BLOCK_COUNT)
            .map(|_| Stage {
                mix: Matrix::glorot(&mut g, HIDDEN, HIDDEN),
                mix_bias: g.fill(HIDDEN).into_iter().map(|v| 0.1 * v).collect(),
                query: Matrix::glorot(&mut g, HIDDEN, HIDDEN),
                key: Matrix::glorot(&mut g, HIDDEN, EMBED_DIM),
                value: Matrix::glorot(&mut g, HIDDEN, EMBED_DIM),
                out: Matrix::glorot(&mut g, HIDDEN, HIDDEN),
            })
            .collect();
        let output = Matrix::glorot(&mut g, CHANNELS, HIDDEN);
        Self {
            bos,
            eos,
            pad,
            positions,
            input,
            time,
            stages,
            output,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    descriptor: BackendDescriptor,
    weights: ToyWeights,
    uncond: PromptEmbedding,
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyBackend {
    pub fn new() -> Self {
        Self::with_weight_seed(TOY_WEIGHT_SEED)
    }

    pub fn with_weight_seed(seed: u64) -> Self {
        let weights = ToyWeights::generate(seed);
        let descriptor = BackendDescriptor {
            name: "toy".into(),
            latent_shape: LatentShape::new(CHANNELS, SIDE, SIDE),
            embedding_shape: (TOKENS, EMBED_DIM),
            block_ids: BlockId::ALL.to_vec(),
            scheduler_name: "toy-linear-gamma".into(),
            default_steps: super::DEFAULT_STEPS,
            default_guidance: super::DEFAULT_GUIDANCE,
        };
        let uncond = encode_with(&weights, "").expect("empty prompt always fits");
        Self {
            descriptor,
            weights,
            uncond,
        }
    }

    /// A descriptor variant without per-block routing, for exercising the
    /// UNET capability check.
    pub fn without_block_routing(mut self) -> Self {
        self.descriptor.block_ids.clear();
        self.descriptor.name = "toy-no-routing".into();
        self
    }

    pub fn token_limit(&self) -> usize {
        TOKENS
    }

    /// Step size for iteration `step` of `total_steps`.
    pub fn gamma(step: usize, total_steps: usize) -> f64 {
        TOY_GAMMA_MAX * (total_steps - step) as f64 / total_steps as f64
    }

    fn stage(&self, block: BlockId, hidden: &mut [f64], embedding: &PromptEmbedding) {
        let stage = &self.weights.stages[block.position()];

        // Convolution-like mixing: blend each position with its 4-neighbourhood,
        // then a per-position channel mix with a residual connection.
        let snapshot = hidden.to_vec();
        let mut spatial = [0.0; HIDDEN];
        let mut mixed = [0.0; HIDDEN];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let p = y * SIDE + x;
                let mut count = 0.0;
                let mut neighbour = [0.0; HIDDEN];
                let offsets: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
                for (dy, dx) in offsets {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= SIDE as isize || nx >= SIDE as isize {
                        continue;
                    }
                    let q = ny as usize * SIDE + nx as usize;
                    for (n, v) in neighbour.iter_mut().zip(&snapshot[q * HIDDEN..(q + 1) * HIDDEN]) {
                        *n += v;
                    }
                    count += 1.0;
                }
                for k in 0..HIDDEN {
                    spatial[k] = 0.5 * snapshot[p * HIDDEN + k] + 0.5 * neighbour[k] / count;
                }
                stage.mix.apply_into(&spatial, &mut mixed);
                for k in 0..HIDDEN {
                    hidden[p * HIDDEN + k] += (mixed[k] + stage.mix_bias[k]).tanh();
                }
            }
        }

        // Single-head cross-attention over the prompt tokens.
        let keys: Vec<Vec<f64>> = (0..embedding.tokens_length())
            .map(|t| stage.key.apply(embedding.token(t)))
            .collect();
        let values: Vec<Vec<f64>> = (0..embedding.tokens_length())
            .map(|t| stage.value.apply(embedding.token(t)))
            .collect();
        let scale = 1.0 / (HIDDEN as f64).sqrt();
        let mut query = [0.0; HIDDEN];
        let mut attended = [0.0; HIDDEN];
        let mut projected = [0.0; HIDDEN];
        let mut scores = vec![0.0; keys.len()];
        for p in 0..POSITIONS {
            let h = &mut hidden[p * HIDDEN..(p + 1) * HIDDEN];
            stage.query.apply_into(h, &mut query);
            for (s, k) in scores.iter_mut().zip(&keys) {
                *s = query.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            attended.fill(0.0);
            for (s, v) in scores.iter().zip(&values) {
                let w = s / total;
                for (a, vv) in attended.iter_mut().zip(v) {
                    *a += w * vv;
                }
            }
            stage.out.apply_into(&attended, &mut projected);
            for (hh, pp) in h.iter_mut().zip(&projected) {
                *hh += pp;
            }
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn word_vector(word: &str) -> Vec<f64> {
    let mut key = b"token:".to_vec();
    key.extend_from_slice(word.as_bytes());
    GaussianStream::new(seed_from_bytes(&key)).fill(EMBED_DIM)
}

fn encode_with(weights: &ToyWeights, text: &str) -> Result<PromptEmbedding> {
    let words = tokenize(text);
    let needed = words.len() + 2;
    if needed > TOKENS {
        return Err(Error::PromptTooLong {
            text: text.to_string(),
            tokens: needed,
            limit: TOKENS,
        });
    }
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(TOKENS);
    raw.push(weights.bos.clone());
    raw.extend(words.iter().map(|w| word_vector(w)));
    raw.push(weights.eos.clone());
    while raw.len() < TOKENS {
        raw.push(weights.pad.clone());
    }
    let mut data = Vec::with_capacity(TOKENS * EMBED_DIM);
    let mut running = [0.0; EMBED_DIM];
    for (j, tok) in raw.iter().enumerate() {
        let pos = &weights.positions[j * EMBED_DIM..(j + 1) * EMBED_DIM];
        let row: Vec<f64> = tok.iter().zip(pos).map(|(t, p)| t + 0.5 * p).collect();
        for (r, v) in running.iter_mut().zip(&row) {
            *r += v;
        }
        let n = (j + 1) as f64;
        data.extend(row.iter().zip(&running).map(|(v, r)| (v + r / n).tanh()));
    }
    PromptEmbedding::new(TOKENS, EMBED_DIM, data, text)
}

fn time_features(step: usize, total_steps: usize) -> [f64; TIME_FEATURES] {
    let tau = (total_steps - step) as f64 / total_steps as f64;
    let angle = std::f64::consts::PI * tau;
    [angle.sin(), angle.cos(), (2.0 * angle).sin(), (2.0 * angle).cos()]
}

impl DiffusionBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode(&self, text: &str) -> Result<PromptEmbedding> {
        encode_with(&self.weights, text)
    }

    fn uncond_embedding(&self) -> &PromptEmbedding {
        &self.uncond
    }

    fn predict_noise(
        &self,
        latent: &Latent,
        step: usize,
        total_steps: usize,
        conditioning: &BlockConditioning<'_>,
    ) -> Result<Vec<f64>> {
        if latent.shape() != self.descriptor.latent_shape {
            return Err(Error::ShapeMismatch(format!(
                "toy backend expects latent {:?}, got {:?}",
                self.descriptor.latent_shape,
                latent.shape()
            )));
        }
        if step >= total_steps {
            return Err(Error::InvalidConfig(format!("step {step} outside 0..{total_steps}")));
        }
        let x = latent.data();
        let time = self.weights.time.apply(&time_features(step, total_steps));
        let mut hidden = vec![0.0; POSITIONS * HIDDEN];
        let mut pixel = [0.0; CHANNELS];
        for p in 0..POSITIONS {
            for (c, v) in pixel.iter_mut().enumerate() {
                *v = x[c * POSITIONS + p];
            }
            let h = &mut hidden[p * HIDDEN..(p + 1) * HIDDEN];
            self.weights.input.apply_into(&pixel, h);
            for (hh, t) in h.iter_mut().zip(&time) {
                *hh += t;
            }
        }

        let mut skips = Vec::with_capacity(3);
        for block in [BlockId::E0, BlockId::E1, BlockId::E2] {
            self.stage(block, &mut hidden, conditioning.get(block));
            skips.push(hidden.clone());
        }
        self.stage(BlockId::B, &mut hidden, conditioning.get(BlockId::B));
        for block in [BlockId::D0, BlockId::D1, BlockId::D2] {
            let skip = skips.pop().expect("one skip per encoder stage");
            for (h, s) in hidden.iter_mut().zip(&skip) {
                *h += s;
            }
            self.stage(block, &mut hidden, conditioning.get(block));
        }

        let mut eps = vec![0.0; CHANNELS * POSITIONS];
        let mut out = [0.0; CHANNELS];
        for p in 0..POSITIONS {
            self.weights.output.apply_into(&hidden[p * HIDDEN..(p + 1) * HIDDEN], &mut out);
            for (c, v) in out.iter().enumerate() {
                eps[c * POSITIONS + p] = *v;
            }
        }
        Ok(eps)
    }

    fn scheduler_update(
        &self,
        latent: &Latent,
        noise: &[f64],
        step: usize,
        total_steps: usize,
        _scheduler: &mut SchedulerState,
    ) -> Result<Latent> {
        if noise.len() != latent.data().len() {
            return Err(Error::ShapeMismatch(format!(
                "noise estimate has {} values, latent has {}",
                noise.len(),
                latent.data().len()
            )));
        }
        let gamma = Self::gamma(step, total_steps);
        let data = latent.data().iter().zip(noise).map(|(x, e)| x - gamma * e).collect();
        Latent::new(latent.shape(), data)
    }

    /// Bilinear 8x upsampling followed by a fixed latent-to-RGB projection.
    fn decode(&self, latent: &Latent) -> Result<Image> {
        if !latent.is_finite() {
            return Err(Error::NonFinite {
                what: "latent passed to decode",
                step: 0,
            });
        }
        let shape = latent.shape();
        if shape.channels != CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "toy decoder needs {CHANNELS} latent channels, got {}",
                shape.channels
            )));
        }
        let (lh, lw) = (shape.height, shape.width);
        let (height, width) = (lh * UPSCALE, lw * UPSCALE);
        let x = latent.data();
        let sample = |c: usize, py: usize, px: usize| -> f64 {
            let sy = ((py as f64 + 0.5) / UPSCALE as f64 - 0.5).clamp(0.0, (lh - 1) as f64);
            let sx = ((px as f64 + 0.5) / UPSCALE as f64 - 0.5).clamp(0.0, (lw - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(lh - 1), (x0 + 1).min(lw - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let at = |y: usize, xx: usize| x[c * lh * lw + y * lw + xx];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        };
        let mut data = Vec::with_capacity(height * width * 3);
        for py in 0..height {
            for px in 0..width {
                let v: [f64; CHANNELS] = std::array::from_fn(|c| sample(c, py, px));
                for row in DECODE_MATRIX {
                    data.push(row.iter().zip(&v).map(|(m, l)| m * l).sum::<f64>() as f32);
                }
            }
        }
        Image::new(width as u32, height as u32, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{init_latent, NoiseTrajectoryState};

    #[test]
    fn over_length_prompt_is_rejected() {
        let toy = ToyBackend::new();
        let long = "word ".repeat(15);
        assert!(matches!(toy.encode(&long), Err(Error::PromptTooLong { .. })));
        assert!(toy.encode(&"word ".repeat(14)).is_ok());
    }

    #[test]
    fn longest_registry_prompt_fits() {
        let toy = ToyBackend::new();
        assert!(toy.encode("The Girl with a Pearl Earring by Johannes Vermeer").is_ok());
    }

    #[test]
    fn zero_latent_decodes_to_mid_gray() {
        let toy = ToyBackend::new();
        let img = toy.decode(&Latent::zeros(LatentShape::new(4, 8, 8)).unwrap()).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(img.data().iter().all(|&v| v == 0.0));
        assert!(img.to_rgb8().pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn decode_is_deterministic() {
        let toy = ToyBackend::new();
        let latent = init_latent(3, toy.descriptor().latent_shape).unwrap();
        assert_eq!(toy.decode(&latent).unwrap(), toy.decode(&latent).unwrap());
    }

    #[test]
    fn decode_of_seed_zero_noise_is_centred() {
        let toy = ToyBackend::new();
        let latent = init_latent(0, toy.descriptor().latent_shape).unwrap();
        let mean = toy.decode(&latent).unwrap().mean();
        assert!(mean.abs() <= 0.1, "mean pixel {mean}");
    }

    #[test]
    fn decode_rejects_non_finite() {
        let toy = ToyBackend::new();
        let mut data = vec![0.0; 256];
        data[5] = f64::INFINITY;
        let latent = Latent::new(LatentShape::new(4, 8, 8), data).unwrap();
        assert!(matches!(toy.decode(&latent), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn gamma_schedule_decreases_linearly() {
        assert_eq!(ToyBackend::gamma(0, 25), TOY_GAMMA_MAX);
        assert!((ToyBackend::gamma(24, 25) - TOY_GAMMA_MAX / 25.0).abs() < 1e-15);
    }

    #[test]
    fn different_blocks_change_the_prediction() {
        let toy = ToyBackend::new();
        let lion = toy.encode("lion").unwrap();
        let cat = toy.encode("cat").unwrap();
        let latent = init_latent(0, toy.descriptor().latent_shape).unwrap();
        let all_lion = toy.predict_noise(&latent, 0, 25, &BlockConditioning::uniform(&lion)).unwrap();
        for block in BlockId::ALL {
            let mut per = [&lion; BLOCK_COUNT];
            per[block.position()] = &cat;
            let eps = toy.predict_noise(&latent, 0, 25, &BlockConditioning::from_blocks(per)).unwrap();
            assert_ne!(eps, all_lion, "block {block} had no effect");
        }
    }

    #[test]
    fn denoise_step_rejects_wrong_embedding_shape() {
        let mut toy = ToyBackend::new();
        let state = NoiseTrajectoryState::begin(toy.init_latent(0).unwrap(), 2).unwrap();
        let bad = PromptEmbedding::new(2, 2, vec![0.0; 4], "bad").unwrap();
        let uncond = toy.uncond_embedding().clone();
        let err = toy.denoise_step(state, &BlockConditioning::uniform(&bad), &uncond, 7.5);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn denoise_step_stops_after_last_step() {
        let mut toy = ToyBackend::new();
        let uncond = toy.uncond_embedding().clone();
        let cond = toy.encode("lion").unwrap();
        let mut state = NoiseTrajectoryState::begin(toy.init_latent(0).unwrap(), 1).unwrap();
        state = toy.denoise_step(state, &BlockConditioning::uniform(&cond), &uncond, 7.5).unwrap();
        assert!(state.is_finished());
        assert_eq!(state.instrumentation().len(), BLOCK_COUNT);
        assert!(toy.denoise_step(state, &BlockConditioning::uniform(&cond), &uncond, 7.5).is_err());
    }

    #[test]
    fn non_finite_latent_reports_step() {
        let mut toy = ToyBackend::new();
        let uncond = toy.uncond_embedding().clone();
        let cond = toy.encode("lion").unwrap();
        let state = NoiseTrajectoryState::begin(toy.init_latent(0).unwrap(), 3).unwrap();
        let err = toy
            .denoise_step(state, &BlockConditioning::uniform(&cond), &uncond, 1e308)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err}");
    }
}
