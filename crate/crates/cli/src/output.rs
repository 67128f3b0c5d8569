//! Atomic file output, run manifests and embedder setup.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bdrisk_core::corpus::{Corpus, Post};
use bdrisk_core::encoder::{
    CommandProvider, EmbeddingCache, EmbeddingProvider, EncodeError, HashProjectionProvider, PostEmbedder,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CACHE_ENV: &str = "BDRISK_CACHE_DIR";

/// Writes through a temp file in the target directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.into()))?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `out.csv` -> `out.<suffix>` next to it.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub corpus_sha256: Option<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            argv: std::env::args().collect(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            corpus_sha256: None,
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.finished_at = now();
        write_json(path, &self)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Which embedding provider to use; recorded in checkpoints so evaluation
/// can rebuild identical inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    Hash { dimension: usize, seed: u64 },
    Command { command: String, dimension: usize },
}

impl EncoderSpec {
    pub fn to_metadata(&self, out: &mut BTreeMap<String, String>) {
        match self {
            EncoderSpec::Hash { dimension, seed } => {
                out.insert("encoder".into(), "hash".into());
                out.insert("encoder_dimension".into(), dimension.to_string());
                out.insert("encoder_seed".into(), seed.to_string());
            }
            EncoderSpec::Command { command, dimension } => {
                out.insert("encoder".into(), "command".into());
                out.insert("encoder_dimension".into(), dimension.to_string());
                out.insert("encoder_command".into(), command.clone());
            }
        }
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let get = |k: &str| meta.get(k).ok_or_else(|| CliError::Data(format!("checkpoint metadata lacks {k:?}")));
        let dimension = get("encoder_dimension")?
            .parse()
            .map_err(|_| CliError::Data("bad encoder_dimension in checkpoint".into()))?;
        match get("encoder")?.as_str() {
            "hash" => Ok(EncoderSpec::Hash {
                dimension,
                seed: get("encoder_seed")?
                    .parse()
                    .map_err(|_| CliError::Data("bad encoder_seed in checkpoint".into()))?,
            }),
            "command" => Ok(EncoderSpec::Command { command: get("encoder_command")?.clone(), dimension }),
            other => Err(CliError::Data(format!("unknown encoder {other:?} in checkpoint"))),
        }
    }

    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        Ok(match self {
            EncoderSpec::Hash { dimension, seed } => Box::new(HashProjectionProvider::new(*dimension, *seed)),
            EncoderSpec::Command { command, dimension } => {
                let mut parts = command.split_whitespace().map(String::from);
                let program = parts.next().ok_or_else(|| CliError::Usage("empty --embed-cmd".into()))?;
                Box::new(CommandProvider::new(program, parts.collect(), *dimension))
            }
        })
    }
}

/// Embeds every post of the corpus once. With `BDRISK_CACHE_DIR` set, the
/// table is also read from and written to that directory.
pub fn embed_corpus(spec: &EncoderSpec, corpus: &Corpus, corpus_hash: &str) -> Result<CorpusEmbeddings, CliError> {
    let provider = spec.provider()?;
    let cache_file = std::env::var_os(CACHE_ENV).map(|dir| {
        let name: String = provider
            .name()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        PathBuf::from(dir).join(format!("{name}-d{}-{}.json", provider.dimension(), &corpus_hash[..16]))
    });
    if let Some(path) = &cache_file {
        if path.exists() {
            let cache = EmbeddingCache::load(path)?;
            if cache.provider == provider.name() && cache.dimension == provider.dimension() {
                return Ok(CorpusEmbeddings(cache));
            }
        }
    }
    let mut cache = EmbeddingCache::new(provider.as_ref());
    cache.fill(provider.as_ref(), corpus.posts())?;
    if let Some(path) = &cache_file {
        write_atomic(path, |w| serde_json::to_writer(w, &cache).map_err(|e| CliError::Io(e.into())))?;
    }
    Ok(CorpusEmbeddings(cache))
}

pub struct CorpusEmbeddings(EmbeddingCache);

impl PostEmbedder for CorpusEmbeddings {
    fn dimension(&self) -> usize {
        self.0.dimension
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>, EncodeError> {
        self.0.embed(post)
    }
}
