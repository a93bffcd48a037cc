//! Sentence vectors behind a provider interface, and the vector math used
//! downstream.
//!
//! Two providers exist: a remote service speaking a small JSON protocol
//! (`POST {base_url}/embed`, `{"texts": [...]}` → `{"vectors": [[...], ...]}`)
//! and an offline hashed character-trigram embedder that needs no model.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};

pub const DEFAULT_FALLBACK_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("vector has no components")]
    EmptyVector,
    #[error("vector component {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding batch {batch}: expected {expected} vectors, got {got}")]
    CountMismatch {
        batch: usize,
        expected: usize,
        got: usize,
    },
    #[error("embedding batch {batch} returned dimension {got}, earlier batches had {expected}")]
    BatchDimension {
        batch: usize,
        expected: usize,
        got: usize,
    },
    #[error("embedding batch {batch} failed: {source}")]
    Http {
        batch: usize,
        #[source]
        source: HttpError,
    },
    #[error("embedding batch {batch}: malformed response: {message}")]
    Malformed { batch: usize, message: String },
    #[error("invalid embedding provider config: {0}")]
    Config(String),
}

impl EmbedError {
    /// Contract violations (as opposed to transport failures) are fatal for
    /// a pipeline run.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            EmbedError::DimensionMismatch { .. }
                | EmbedError::CountMismatch { .. }
                | EmbedError::BatchDimension { .. }
                | EmbedError::NonFinite { .. }
                | EmbedError::Malformed { .. }
        )
    }
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
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

    /// Unit-length copy; zero vectors are returned as is.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            Self(self.0.iter().map(|v| v / n).collect())
        }
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine of the angle between two vectors. A zero vector on either side
/// gives 0 (with a logged warning).
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity with a zero vector; returning 0");
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Counts the character trigrams of the lowercased text into `dim` buckets
/// (FNV-1a of the trigram's UTF-8 bytes, modulo `dim`) and L2-normalizes.
/// Text shorter than three characters maps to the zero vector.
///
/// # Panics
///
/// If `dim < 2`.
pub fn hashed_fallback_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 2, "hashed embedding dimension must be at least 2");
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = vec![0.0f64; dim];
    let mut buf = String::with_capacity(12);
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        counts[(fnv1a64(buf.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    EmbeddingVector(counts).normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    HashedFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub base_url: Option<String>,
    pub auth_env_var: Option<String>,
    pub dim: Option<usize>,
    pub batch_size: usize,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl EmbeddingProviderConfig {
    pub fn hashed(dim: usize) -> Self {
        Self {
            kind: ProviderKind::HashedFallback,
            base_url: None,
            auth_env_var: None,
            dim: Some(dim),
            batch_size: 64,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn remote(base_url: impl Into<String>, auth_env_var: Option<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            base_url: Some(base_url.into()),
            auth_env_var,
            dim: None,
            ..Self::hashed(DEFAULT_FALLBACK_DIM)
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        match self.kind {
            ProviderKind::Remote if self.base_url.as_deref().is_none_or(str::is_empty) => Err(
                EmbedError::Config("remote provider requires base_url".into()),
            ),
            ProviderKind::HashedFallback if self.dim.is_none_or(|d| d < 2) => Err(
                EmbedError::Config("hashed fallback requires dim >= 2".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: self.kind,
            base_url: match self.kind {
                ProviderKind::Remote => self.base_url.clone(),
                ProviderKind::HashedFallback => None,
            },
            dim: match self.kind {
                ProviderKind::Remote => None,
                ProviderKind::HashedFallback => self.dim,
            },
        }
    }
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self::hashed(DEFAULT_FALLBACK_DIM)
    }
}

/// Identifies the provider that produced a set of vectors, so stage outputs
/// from different providers are never mixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
    fn descriptor(&self) -> ProviderDescriptor;
}

#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 2 {
            return Err(EmbedError::Config(
                "hashed fallback requires dim >= 2".into(),
            ));
        }
        Ok(Self { dim })
    }
}

impl Embedder for HashedEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(texts
            .iter()
            .map(|t| hashed_fallback_embed(t, self.dim))
            .collect())
    }

    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::HashedFallback,
            base_url: None,
            dim: Some(self.dim),
        }
    }
}

pub struct RemoteEmbedder {
    url: String,
    base_url: String,
    batch_size: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(cfg: &EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let base_url = cfg
            .base_url
            .clone()
            .ok_or_else(|| EmbedError::Config("remote provider requires base_url".into()))?;
        let policy = RetryPolicy {
            max_retries: cfg.max_retries,
            backoff_base: cfg.backoff_base,
            timeout: cfg.timeout,
        };
        Ok(Self {
            url: join_url(&base_url, "embed"),
            base_url,
            batch_size: cfg.batch_size,
            client: JsonClient::new(cfg.auth_env_var.as_deref(), policy),
        })
    }

    fn embed_one_batch(
        &self,
        batch: usize,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let resp = self
            .client
            .post(&self.url, &json!({ "texts": texts }))
            .map_err(|source| EmbedError::Http { batch, source })?;
        let malformed = |message: String| EmbedError::Malformed { batch, message };
        let rows = resp
            .get("vectors")
            .and_then(|v| v.as_array())
            .ok_or_else(|| malformed("missing \"vectors\" array".into()))?;
        if rows.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                batch,
                expected: texts.len(),
                got: rows.len(),
            });
        }
        rows.iter()
            .map(|row| {
                let values: Vec<f64> =
                    serde_json::from_value(row.clone()).map_err(|e| malformed(e.to_string()))?;
                EmbeddingVector::new(values)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut out: Vec<EmbeddingVector> = Vec::with_capacity(texts.len());
        for (batch, chunk) in texts.chunks(self.batch_size).enumerate() {
            let vectors = self.embed_one_batch(batch, chunk)?;
            let expected = out
                .first()
                .or(vectors.first())
                .map_or(0, EmbeddingVector::dim);
            if let Some(bad) = vectors.iter().find(|v| v.dim() != expected) {
                return Err(EmbedError::BatchDimension {
                    batch,
                    expected,
                    got: bad.dim(),
                });
            }
            out.extend(vectors);
        }
        Ok(out)
    }

    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::Remote,
            base_url: Some(self.base_url.clone()),
            dim: None,
        }
    }
}

pub fn build_embedder(cfg: &EmbeddingProviderConfig) -> Result<Box<dyn Embedder>, EmbedError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::HashedFallback => Box::new(HashedEmbedder::new(
            cfg.dim.unwrap_or(DEFAULT_FALLBACK_DIM),
        )?),
        ProviderKind::Remote => Box::new(RemoteEmbedder::new(cfg)?),
    })
}

/// Embeds `texts` with the provider described by `cfg`, preserving order.
pub fn embed_batch(
    texts: &[String],
    cfg: &EmbeddingProviderConfig,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    build_embedder(cfg)?.embed(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!(
            (cosine_similarity(&v(&[1., 2., 2.]), &v(&[1., 2., 2.])).unwrap() - 1.0).abs() < 1e-12
        );
        assert_eq!(
            cosine_similarity(&v(&[1., 0.]), &v(&[0., 1.])).unwrap(),
            0.0
        );
        let c = cosine_similarity(&v(&[1., 2., 2.]), &v(&[2., 1., 2.])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&v(&[0., 0.]), &v(&[1., 1.])).unwrap(),
            0.0
        );
        assert!(matches!(
            cosine_similarity(&v(&[1.]), &v(&[1., 2.])),
            Err(EmbedError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(EmbedError::NonFinite { index: 1 })
        ));
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn short_text_is_zero_vector() {
        let e = hashed_fallback_embed("ab", 16);
        assert_eq!(e.dim(), 16);
        assert_eq!(e.norm(), 0.0);
    }

    #[test]
    fn trigram_buckets_match_brute_force() {
        let dim = 7;
        let text = "abcabc";
        // Trigrams by hand: abc, bca, cab, abc.
        let mut counts: HashMap<&str, f64> = HashMap::new();
        for t in ["abc", "bca", "cab", "abc"] {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut buckets = vec![0.0; dim];
        for (t, c) in counts {
            buckets[(fnv1a64(t.as_bytes()) % dim as u64) as usize] += c;
        }
        let norm = buckets.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f64> = buckets.iter().map(|x| x / norm).collect();
        let got = hashed_fallback_embed(text, dim);
        for (g, e) in got.values().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
        assert_eq!(hashed_fallback_embed("ABCabc", dim), got);
    }

    #[test]
    fn batch_shape_and_determinism() {
        let cfg = EmbeddingProviderConfig::hashed(512);
        let texts = vec!["first statement".to_string(), "first statement".to_string()];
        let out = embed_batch(&texts, &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|e| e.dim() == 512));
        assert_eq!(out[0], out[1]);
        assert!(matches!(
            embed_batch(&[], &cfg),
            Err(EmbedError::EmptyInput)
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EmbeddingProviderConfig::remote("", None);
        assert!(cfg.validate().is_err());
        cfg.base_url = Some("http://localhost:1".into());
        assert!(cfg.validate().is_ok());
        assert!(EmbeddingProviderConfig::hashed(1).validate().is_err());
    }

    proptest! {
        #[test]
        fn cosine_properties(
            a in proptest::collection::vec(-100.0f64..100.0, 4),
            b in proptest::collection::vec(-100.0f64..100.0, 4),
            scale in 0.001f64..1000.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            if va.norm() > 1e-9 && vb.norm() > 1e-9 {
                let scaled = v(&a.iter().map(|x| x * scale).collect::<Vec<_>>());
                prop_assert!((cosine_similarity(&scaled, &vb).unwrap() - ab).abs() < 1e-12);
            }
        }

        #[test]
        fn hashed_norm_is_zero_or_one(text in "\\PC{0,40}") {
            let n = hashed_fallback_embed(&text, 64).norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
            if text.chars().count() >= 3 {
                let e = hashed_fallback_embed(&text, 64);
                prop_assert!((cosine_similarity(&e, &e).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
