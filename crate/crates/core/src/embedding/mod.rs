//! Embedding vectors, cosine/centroid math, and the provider seam that turns
//! patches into vectors.
//!
//! Components are `f64` so that unit-norm checks hold to 1e-9; the vector
//! index stores them as `f32`.

mod providers;

pub use providers::{
    embed, EmbeddingProvider, LabelOracleEmbedder, PatchHashEmbedder, ProviderError,
    RemoteEmbedder, CLASS_MARKER,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Embedding width of the small vision transformer the pipeline targets.
pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty reference list")]
    EmptyList,
    #[error("vector must have at least one component")]
    Empty,
    #[error("component {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= 1e-6
    }

    /// Rounds every component to `f32`, the index storage precision.
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64, EmbeddingError> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

fn check_dims(expected: usize, got: usize) -> Result<(), EmbeddingError> {
    if expected == got {
        Ok(())
    } else {
        Err(EmbeddingError::DimMismatch { expected, got })
    }
}

pub fn normalize(e: &Embedding) -> Result<Embedding, EmbeddingError> {
    let n = e.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(Embedding(e.0.iter().map(|v| v / n).collect()))
}

/// Dot product over the product of norms, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalized arithmetic mean of the references.
pub fn centroid(refs: &[Embedding]) -> Result<Embedding, EmbeddingError> {
    let first = refs.first().ok_or(EmbeddingError::EmptyList)?;
    let mut sum = vec![0.0f64; first.dim()];
    for r in refs {
        check_dims(first.dim(), r.dim())?;
        for (s, v) in sum.iter_mut().zip(&r.0) {
            *s += v;
        }
    }
    let n = refs.len() as f64;
    normalize(&Embedding(sum.into_iter().map(|s| s / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&e(&[3.0, 4.0, 0.0])).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-15);
        assert!((n.values()[1] - 0.8).abs() < 1e-15);
        assert_eq!(n.values()[2], 0.0);

        let u = e(&[0.0, 1.0, 0.0]);
        assert_eq!(normalize(&u).unwrap(), u);
        assert_eq!(normalize(&e(&[0.0; 4])), Err(EmbeddingError::ZeroVector));
    }

    #[test]
    fn construction_rejects_bad_values() {
        assert_eq!(Embedding::new(vec![]), Err(EmbeddingError::Empty));
        assert_eq!(Embedding::new(vec![1.0, f64::NAN]), Err(EmbeddingError::NonFinite(1)));
        let parsed: Result<Embedding, _> = serde_json::from_str("[1.0, 2.0]");
        assert!(parsed.is_ok());
        let parsed: Result<Embedding, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = e(&[0.3, -2.0, 5.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&e(&[1.0, 0.0, 0.0]), &e(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        let s = cosine_similarity(&e(&[1.0, 1.0, 0.0]), &e(&[1.0, 0.0, 0.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s - 0.707107).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimMismatch { expected: 2, got: 3 })
        ));
        assert_eq!(
            cosine_similarity(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroVector)
        );
    }

    #[test]
    fn centroid_examples() {
        let v = e(&[2.0, 0.0, 1.0]);
        assert_eq!(centroid(&[v.clone()]).unwrap(), normalize(&v).unwrap());

        let c = centroid(&[e(&[1.0, 0.0, 0.0]), e(&[0.0, 1.0, 0.0])]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.values()[0] - h).abs() < 1e-12 && (c.values()[1] - h).abs() < 1e-12);

        let neg = e(&[-2.0, 0.0, -1.0]);
        assert_eq!(centroid(&[v.clone(), neg]), Err(EmbeddingError::ZeroVector));
        assert_eq!(centroid(&[]), Err(EmbeddingError::EmptyList));
        assert!(matches!(
            centroid(&[v, e(&[1.0])]),
            Err(EmbeddingError::DimMismatch { .. })
        ));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Embedding> {
        prop::collection::vec(-10.0..10.0f64, dim)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
            .prop_map(|v| Embedding::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn scale_invariance(a in vec_strategy(16), b in vec_strategy(16), alpha in 1e-3..1e3f64) {
            let scaled = Embedding::new(a.values().iter().map(|v| v * alpha).collect()).unwrap();
            let d = cosine_similarity(&scaled, &b).unwrap() - cosine_similarity(&a, &b).unwrap();
            prop_assert!(d.abs() <= 1e-9);
        }

        #[test]
        fn symmetry(a in vec_strategy(16), b in vec_strategy(16)) {
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
        }

        #[test]
        fn unit_cosine_is_dot(a in vec_strategy(32), b in vec_strategy(32)) {
            let (ua, ub) = (normalize(&a).unwrap(), normalize(&b).unwrap());
            prop_assert!((ua.norm() - 1.0).abs() <= 1e-9);
            let d = cosine_similarity(&ua, &ub).unwrap() - ua.dot(&ub).unwrap();
            prop_assert!(d.abs() <= 1e-9);
        }

        #[test]
        fn centroid_permutation_invariant(refs in prop::collection::vec(vec_strategy(8), 1..6), seed in any::<u64>()) {
            let Ok(c) = centroid(&refs) else { return Ok(()); };
            let mut shuffled = refs.clone();
            // deterministic rotation + reversal as the permutation
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let c2 = centroid(&shuffled).unwrap();
            for (x, y) in c.values().iter().zip(c2.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
