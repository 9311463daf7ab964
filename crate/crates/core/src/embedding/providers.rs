use std::time::Duration;

use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{normalize, Embedding, EmbeddingError};
use crate::geometry::Patch;
use crate::remote::{RemoteClient, RemoteError};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("provider returned dimension {got}, expected {expected}")]
    WrongDim { expected: usize, got: usize },
    #[error("patch not supported by this provider: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
}

/// Turns a letterboxed patch into an embedding.
///
/// Implementations must be deterministic for a fixed instance and safe to
/// call from several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, patch: &Patch) -> Result<Embedding, ProviderError>;
}

/// Runs a provider and checks its output against the advertised dimension.
pub fn embed(provider: &dyn EmbeddingProvider, patch: &Patch) -> Result<Embedding, ProviderError> {
    let e = provider.embed(patch)?;
    if e.dim() != provider.dim() {
        return Err(ProviderError::WrongDim {
            expected: provider.dim(),
            got: e.dim(),
        });
    }
    Ok(e)
}

/// Seeded stand-in for a learned embedder: 16x16 grayscale thumbnail,
/// projected by a fixed Gaussian matrix, then normalized.
#[derive(Debug, Clone)]
pub struct PatchHashEmbedder {
    seed: u64,
    dim: usize,
    projection: Vec<f64>,
}

const THUMB: usize = 16;

impl PatchHashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * THUMB * THUMB)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            seed,
            dim,
            projection,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn thumbnail(patch: &Patch) -> [f64; THUMB * THUMB] {
        let (w, h) = (patch.width() as usize, patch.height() as usize);
        let mut out = [0.0f64; THUMB * THUMB];
        for cy in 0..THUMB {
            let y0 = cy * h / THUMB;
            let y1 = ((cy + 1) * h / THUMB).max(y0 + 1).min(h);
            for cx in 0..THUMB {
                let x0 = cx * w / THUMB;
                let x1 = ((cx + 1) * w / THUMB).max(x0 + 1).min(w);
                let mut sum = 0.0;
                let mut n = 0usize;
                for y in y0.min(h - 1)..y1 {
                    for x in x0.min(w - 1)..x1 {
                        let p = patch.pixels.get_pixel(x as u32, y as u32);
                        sum += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                        n += 1;
                    }
                }
                out[cy * THUMB + cx] = sum / (n.max(1) as f64 * 255.0);
            }
        }
        out
    }
}

impl EmbeddingProvider for PatchHashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, patch: &Patch) -> Result<Embedding, ProviderError> {
        if patch.width() == 0 || patch.height() == 0 {
            return Err(ProviderError::Unsupported("empty patch".into()));
        }
        let thumb = Self::thumbnail(patch);
        let raw: Vec<f64> = self
            .projection
            .chunks_exact(THUMB * THUMB)
            .map(|row| row.iter().zip(&thumb).map(|(a, b)| a * b).sum())
            .collect();
        Ok(normalize(&Embedding::new(raw)?)?)
    }
}

/// Blue channel value that marks a pixel as carrying a class code.
pub const CLASS_MARKER: u8 = 90;

/// Synthesizes a separable embedding space: every class owns a seeded random
/// unit anchor and samples are `normalize(anchor + noise * g / sqrt(D))` with
/// `g` standard normal, so the noise norm is about `noise`.
///
/// As a provider it reads the class from the patch's center pixel, which
/// synthetic scenes paint with [`LabelOracleEmbedder::class_color`]; the
/// noise draw is keyed by a hash of the patch pixels.
#[derive(Debug, Clone)]
pub struct LabelOracleEmbedder {
    seed: u64,
    dim: usize,
    noise: f64,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl LabelOracleEmbedder {
    pub fn new(seed: u64, dim: usize, noise: f64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        assert!(noise >= 0.0 && noise.is_finite(), "noise must be finite and >= 0");
        Self { seed, dim, noise }
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    fn gaussian(&self, key: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn anchor(&self, class: u32) -> Embedding {
        let key = mix(self.seed ^ mix(class as u64));
        normalize(&Embedding(self.gaussian(key))).expect("gaussian draw is nonzero")
    }

    pub fn sample(&self, class: u32, draw: u64) -> Embedding {
        let anchor = self.anchor(class);
        let key = mix(mix(self.seed ^ mix(class as u64)) ^ mix(draw.wrapping_add(1)));
        let scale = self.noise / (self.dim as f64).sqrt();
        let g = self.gaussian(key);
        let v = anchor
            .values()
            .iter()
            .zip(g)
            .map(|(a, n)| a + scale * n)
            .collect();
        normalize(&Embedding(v)).expect("perturbed anchor is nonzero")
    }

    /// Color a synthetic product must be painted with to be recognized as `class`.
    pub fn class_color(class: u16) -> Rgb<u8> {
        let [lo, hi] = class.to_le_bytes();
        Rgb([lo, hi, CLASS_MARKER])
    }

    pub fn decode_class(px: &Rgb<u8>) -> Option<u16> {
        (px[2] == CLASS_MARKER).then(|| u16::from_le_bytes([px[0], px[1]]))
    }
}

impl EmbeddingProvider for LabelOracleEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, patch: &Patch) -> Result<Embedding, ProviderError> {
        if patch.width() == 0 || patch.height() == 0 {
            return Err(ProviderError::Unsupported("empty patch".into()));
        }
        let center = patch.pixels.get_pixel(patch.width() / 2, patch.height() / 2);
        let class = Self::decode_class(center).ok_or_else(|| {
            ProviderError::Unsupported(format!("center pixel {center:?} carries no class code"))
        })?;
        let digest = Sha256::digest(patch.pixels.as_raw());
        let draw = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
        Ok(self.sample(class as u32, draw))
    }
}

/// Adapter for an external embedding service: the patch is posted as PNG and
/// the response is a JSON array of numbers or `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self {
            client: RemoteClient::new(endpoint, timeout),
            dim,
        }
    }
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    Bare(Vec<f64>),
    Wrapped { embedding: Vec<f64> },
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, patch: &Patch) -> Result<Embedding, ProviderError> {
        let text = self.client.post_image(&patch.pixels)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let values = match parsed {
            EmbeddingResponse::Bare(v) | EmbeddingResponse::Wrapped { embedding: v } => v,
        };
        Ok(normalize(&Embedding::new(values)?)?)
    }
}
