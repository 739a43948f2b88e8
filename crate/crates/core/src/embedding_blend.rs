//! Prompt embeddings and the TEXTUAL blend: linear interpolation in the
//! text-encoder output space.

use sha2::{Digest, Sha256};

use crate::backend::DiffusionBackend;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Encoder output for one prompt: a `tokens_length x dim` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    tokens_length: usize,
    dim: usize,
    data: Vec<f64>,
    source_text: String,
    fingerprint: u64,
}

impl PromptEmbedding {
    pub fn new(
        tokens_length: usize,
        dim: usize,
        data: Vec<f64>,
        source_text: impl Into<String>,
    ) -> Result<Self> {
        if tokens_length == 0 || dim == 0 {
            return Err(Error::ShapeMismatch("embedding shape must be non-empty".into()));
        }
        if data.len() != tokens_length * dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding data has {} values, expected {tokens_length}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "prompt embedding",
                step: 0,
            });
        }
        Ok(Self {
            tokens_length,
            dim,
            fingerprint: fingerprint_of(&data),
            data,
            source_text: source_text.into(),
        })
    }

    pub fn tokens_length(&self) -> usize {
        self.tokens_length
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tokens_length, self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// Row `token` of the matrix.
    pub fn token(&self, token: usize) -> &[f64] {
        &self.data[token * self.dim..(token + 1) * self.dim]
    }

    pub fn is_compatible(&self, other: &PromptEmbedding) -> bool {
        self.shape() == other.shape()
    }

    /// Euclidean distance between two shape-compatible embeddings.
    pub fn l2_distance(&self, other: &PromptEmbedding) -> Result<f64> {
        check_compatible(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Content fingerprint over the raw values (first 8 bytes of SHA-256).
    /// Equal data gives an equal fingerprint regardless of `source_text`.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn fingerprint_of(data: &[f64]) -> u64 {
    let mut hasher = Sha256::new();
    for v in data {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

fn check_compatible(a: &PromptEmbedding, b: &PromptEmbedding) -> Result<()> {
    if a.is_compatible(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "embeddings {:?} and {:?} differ in shape",
            a.shape(),
            b.shape()
        )))
    }
}

/// Encode `text` with the backend's text encoder. The empty string yields the
/// unconditional embedding used for classifier-free guidance.
pub fn encode_prompt<B: DiffusionBackend + ?Sized>(backend: &B, text: &str) -> Result<PromptEmbedding> {
    backend.encode(text)
}

/// `alpha * e1 + (1 - alpha) * e2`, elementwise over every token position
/// (padding included).
///
/// `alpha` must lie in `[0, 1]`; extrapolation is rejected rather than clamped.
pub fn interpolate(e1: &PromptEmbedding, e2: &PromptEmbedding, alpha: f64) -> Result<PromptEmbedding> {
    check_compatible(e1, e2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "[0, 1]",
        });
    }
    let beta = 1.0 - alpha;
    let data = e1
        .data
        .iter()
        .zip(&e2.data)
        .map(|(&a, &b)| if a == b { a } else { alpha * a + beta * b })
        .collect::<Vec<f64>>();
    Ok(PromptEmbedding {
        tokens_length: e1.tokens_length,
        dim: e1.dim,
        fingerprint: fingerprint_of(&data),
        data,
        source_text: format!("{} <{alpha}|{beta}> {}", e1.source_text, e2.source_text),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;
    use proptest::prelude::*;

    fn emb(values: Vec<f64>) -> PromptEmbedding {
        let dim = values.len();
        PromptEmbedding::new(1, dim, values, "t").unwrap()
    }

    #[test]
    fn encode_is_deterministic() {
        let toy = ToyBackend::new();
        let a = encode_prompt(&toy, "lion").unwrap();
        let b = encode_prompt(&toy, "lion").unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn empty_prompt_is_the_unconditional_embedding() {
        let toy = ToyBackend::new();
        let empty = encode_prompt(&toy, "").unwrap();
        assert_eq!(empty.data(), toy.uncond_embedding().data());
    }

    #[test]
    fn distinct_prompts_have_distinct_embeddings() {
        let toy = ToyBackend::new();
        let lion = encode_prompt(&toy, "lion").unwrap();
        let cat = encode_prompt(&toy, "cat").unwrap();
        assert!(lion.l2_distance(&cat).unwrap() > 0.0);
    }

    #[test]
    fn endpoints_and_midpoint_symmetry() {
        let toy = ToyBackend::new();
        let e1 = encode_prompt(&toy, "lion").unwrap();
        let e2 = encode_prompt(&toy, "cat").unwrap();
        assert_eq!(interpolate(&e1, &e2, 1.0).unwrap().data(), e1.data());
        assert_eq!(interpolate(&e1, &e2, 0.0).unwrap().data(), e2.data());
        assert_eq!(
            interpolate(&e1, &e2, 0.5).unwrap().data(),
            interpolate(&e2, &e1, 0.5).unwrap().data()
        );
        assert_eq!(interpolate(&e1, &e1, 0.3).unwrap().data(), e1.data());
    }

    #[test]
    fn rejects_out_of_range_alpha() {
        let e = emb(vec![1.0, 2.0]);
        assert!(matches!(interpolate(&e, &e, 1.2), Err(Error::OutOfRange { .. })));
        assert!(matches!(interpolate(&e, &e, -0.1), Err(Error::OutOfRange { .. })));
        assert!(interpolate(&e, &e, f64::NAN).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let a = emb(vec![1.0, 2.0]);
        let b = emb(vec![1.0, 2.0, 3.0]);
        assert!(matches!(interpolate(&a, &b, 0.5), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_non_finite_data() {
        assert!(PromptEmbedding::new(1, 2, vec![1.0, f64::NAN], "x").is_err());
    }

    #[test]
    fn source_text_records_both_prompts() {
        let a = PromptEmbedding::new(1, 1, vec![1.0], "lion").unwrap();
        let b = PromptEmbedding::new(1, 1, vec![0.0], "cat").unwrap();
        let mix = interpolate(&a, &b, 0.25).unwrap();
        assert!(mix.source_text().contains("lion"));
        assert!(mix.source_text().contains("cat"));
        assert!(mix.source_text().contains("0.25"));
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn endpoint_identity((a, b) in vec_pair()) {
            let (e1, e2) = (emb(a), emb(b));
            let (hi, lo) = (interpolate(&e1, &e2, 1.0).unwrap(), interpolate(&e1, &e2, 0.0).unwrap());
            prop_assert_eq!(hi.data(), e1.data());
            prop_assert_eq!(lo.data(), e2.data());
        }

        #[test]
        fn swap_symmetry((a, b) in vec_pair(), alpha in 0.0f64..=1.0) {
            let (e1, e2) = (emb(a), emb(b));
            let fwd = interpolate(&e1, &e2, alpha).unwrap();
            let rev = interpolate(&e2, &e1, 1.0 - alpha).unwrap();
            for (x, y) in fwd.data().iter().zip(rev.data()) {
                let scale = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * scale, "{} vs {}", x, y);
            }
        }

        #[test]
        fn linearity((a, b) in vec_pair(), alpha in 0.0f64..=1.0) {
            let (e1, e2) = (emb(a), emb(b));
            let x = interpolate(&e1, &e2, alpha).unwrap();
            let y = interpolate(&e1, &e2, 1.0 - alpha).unwrap();
            for i in 0..e1.data().len() {
                let lhs = x.data()[i] + y.data()[i];
                let rhs = e1.data()[i] + e2.data()[i];
                let scale = e1.data()[i].abs() + e2.data()[i].abs();
                prop_assert!((lhs - rhs).abs() <= 1e-6 * scale.max(1e-12));
            }
        }
    }
}
