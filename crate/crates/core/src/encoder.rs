//! Post embeddings and per-timeline encoded sequences.
//!
//! Two providers are available: [`HashProjectionProvider`], a seeded,
//! fully offline bag-of-tokens projection used for tests and CI, and
//! [`CommandProvider`], which delegates to an external sentence-embedding
//! model through a subprocess.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Post, SuicidalityLevel, N_SYMPTOMS};
use crate::timeline::{deltas_in_days, Timeline};

pub const DEFAULT_DIMENSION: usize = 1024;
pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding provider `{provider}` unavailable: {message}")]
    ProviderUnavailable { provider: String, message: String },
    #[error("embedding provider `{provider}` returned bad output: {message}")]
    ProviderOutput { provider: String, message: String },
    #[error("no cached embedding for post {0:?}")]
    CacheMiss(String),
    #[error("cache header mismatch: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EncodeError {
    /// True for failures of the provider itself rather than of the input.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            EncodeError::ProviderUnavailable { .. } | EncodeError::ProviderOutput { .. }
        )
    }
}

/// A sentence-embedding model. Implementations must be deterministic per
/// instance and return finite vectors of length [`dimension`](Self::dimension).
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError>;
}

pub fn encode_post(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<f64>, EncodeError> {
    if text.trim().is_empty() {
        return Err(EncodeError::InvalidInput("empty post text".into()));
    }
    let v = provider.encode(text)?;
    if v.len() != provider.dimension() {
        return Err(EncodeError::ProviderOutput {
            provider: provider.name().into(),
            message: format!("expected {} values, got {}", provider.dimension(), v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EncodeError::ProviderOutput {
            provider: provider.name().into(),
            message: "non-finite value".into(),
        });
    }
    Ok(v)
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed-hash bag-of-tokens, projected through a seeded Gaussian matrix
/// and L2-normalized. Rows of the projection are generated on demand from
/// `(seed, bucket)` so the matrix never has to be materialized.
#[derive(Debug, Clone)]
pub struct HashProjectionProvider {
    dimension: usize,
    seed: u64,
    buckets: u64,
    name: String,
}

impl HashProjectionProvider {
    pub const DEFAULT_BUCKETS: u64 = 1 << 20;

    pub fn new(dimension: usize, seed: u64) -> Self {
        Self {
            dimension,
            seed,
            buckets: Self::DEFAULT_BUCKETS,
            name: format!("hash-projection-d{dimension}-s{seed}"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row `bucket` of the projection matrix.
    pub fn projection_row(&self, bucket: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ bucket.wrapping_mul(0xd6e8_feb8_6659_fd93));
        let scale = 1.0 / (self.dimension as f64).sqrt();
        (0..self.dimension)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * scale)
            .collect::<Vec<f64>>()
    }
}

impl EmbeddingProvider for HashProjectionProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        let mut bag: BTreeMap<u64, f64> = BTreeMap::new();
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes(), self.seed);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            *bag.entry(h % self.buckets).or_insert(0.0) += sign;
        }
        let mut out = vec![0.0; self.dimension];
        for (bucket, weight) in bag {
            if weight == 0.0 {
                continue;
            }
            for (o, r) in out.iter_mut().zip(self.projection_row(bucket)) {
                *o += weight * r;
            }
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(out)
    }
}

/// Runs an external program once per text: the text goes to stdin and a
/// JSON array of numbers is expected on stdout. Intended as an adapter for
/// pretrained sentence encoders (e.g. a small Python script).
#[derive(Debug, Clone)]
pub struct CommandProvider {
    program: String,
    args: Vec<String>,
    dimension: usize,
    name: String,
}

impl CommandProvider {
    pub fn new(program: impl Into<String>, args: Vec<String>, dimension: usize) -> Self {
        let program = program.into();
        Self {
            name: format!("command:{program}"),
            program,
            args,
            dimension,
        }
    }
}

impl EmbeddingProvider for CommandProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, EncodeError> {
        let unavailable = |message: String| EncodeError::ProviderUnavailable {
            provider: self.name.clone(),
            message,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| unavailable(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .map_err(|e| unavailable(e.to_string()))?;
        let output = child.wait_with_output().map_err(|e| unavailable(e.to_string()))?;
        if !output.status.success() {
            return Err(unavailable(format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let v: Vec<f64> = serde_json::from_slice(&output.stdout).map_err(|e| EncodeError::ProviderOutput {
            provider: self.name.clone(),
            message: e.to_string(),
        })?;
        Ok(v)
    }
}

/// Anything that can produce the embedding of a post.
pub trait PostEmbedder {
    fn dimension(&self) -> usize;
    fn embed(&self, post: &Post) -> Result<Vec<f64>, EncodeError>;
}

impl<P: EmbeddingProvider + ?Sized> PostEmbedder for P {
    fn dimension(&self) -> usize {
        EmbeddingProvider::dimension(self)
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>, EncodeError> {
        if post.text.trim().is_empty() {
            return Err(EncodeError::InvalidInput(format!("empty text in post {}", post.post_id)));
        }
        let v = self.encode(&post.text)?;
        if v.len() != EmbeddingProvider::dimension(self) || v.iter().any(|x| !x.is_finite()) {
            return Err(EncodeError::ProviderOutput {
                provider: self.name().into(),
                message: format!("bad embedding for post {}", post.post_id),
            });
        }
        Ok(v)
    }
}

/// Post embeddings keyed by `post_id`, tagged with the provider that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    pub provider: String,
    pub dimension: usize,
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn new(provider: &dyn EmbeddingProvider) -> Self {
        Self {
            provider: provider.name().to_string(),
            dimension: provider.dimension(),
            entries: BTreeMap::new(),
        }
    }

    /// Encodes every post not already present.
    pub fn fill<'a>(
        &mut self,
        provider: &dyn EmbeddingProvider,
        posts: impl IntoIterator<Item = &'a Post>,
    ) -> Result<(), EncodeError> {
        if provider.name() != self.provider || provider.dimension() != self.dimension {
            return Err(EncodeError::CacheMismatch(format!(
                "cache built by {} (d={}), provider is {} (d={})",
                self.provider,
                self.dimension,
                provider.name(),
                provider.dimension()
            )));
        }
        for post in posts {
            if !self.entries.contains_key(&post.post_id) {
                let v = encode_post(provider, &post.text)?;
                self.entries.insert(post.post_id.clone(), v);
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }
}

impl PostEmbedder for EmbeddingCache {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>, EncodeError> {
        self.entries
            .get(&post.post_id)
            .cloned()
            .ok_or_else(|| EncodeError::CacheMiss(post.post_id.clone()))
    }
}

/// Model input for one timeline. Real posts occupy the leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub id: String,
    /// `max_len x dimension`; padded rows are zero.
    pub embeddings: Array2<f64>,
    /// Days before the most recent retained post; zero on padding.
    pub deltas: Vec<f64>,
    pub mask: Vec<bool>,
    /// `max_len x 8` multi-hot symptom targets; zero on padding.
    pub symptom_targets: Array2<f64>,
    pub future_label: SuicidalityLevel,
}

impl EncodedSequence {
    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Indices of unmasked rows, in order.
    pub fn real_rows(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }
}

/// Keeps the `max_len` most recent posts and pads to `max_len`.
pub fn encode_timeline<E: PostEmbedder + ?Sized>(
    embedder: &E,
    timeline: &Timeline,
    max_len: usize,
) -> Result<EncodedSequence, EncodeError> {
    if max_len == 0 {
        return Err(EncodeError::InvalidInput("max_len must be positive".into()));
    }
    let start = timeline.posts.len().saturating_sub(max_len);
    let kept = &timeline.posts[start..];
    let dim = embedder.dimension();
    let mut embeddings = Array2::zeros((max_len, dim));
    let mut symptom_targets = Array2::zeros((max_len, N_SYMPTOMS));
    let mut deltas = vec![0.0; max_len];
    let mut mask = vec![false; max_len];
    for (i, (post, delta)) in kept.iter().zip(deltas_in_days(kept)).enumerate() {
        let e = embedder.embed(post)?;
        if e.len() != dim {
            return Err(EncodeError::InvalidInput(format!(
                "embedding for {} has length {}, expected {dim}",
                post.post_id,
                e.len()
            )));
        }
        embeddings.row_mut(i).assign(&ndarray::ArrayView1::from(&e));
        symptom_targets
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&post.symptom.multi_hot()));
        deltas[i] = delta;
        mask[i] = true;
    }
    Ok(EncodedSequence {
        id: timeline.id(),
        embeddings,
        deltas,
        mask,
        symptom_targets,
        future_label: timeline.future_label,
    })
}

pub fn encode_timelines<E: PostEmbedder + ?Sized>(
    embedder: &E,
    timelines: &[Timeline],
    max_len: usize,
) -> Result<Vec<EncodedSequence>, EncodeError> {
    timelines.iter().map(|t| encode_timeline(embedder, t, max_len)).collect()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
