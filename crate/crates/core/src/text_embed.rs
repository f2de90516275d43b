//! Text embedders: a deterministic hashed bag-of-tokens embedder for offline
//! work and a remote HTTP embedder for sentence-transformer servers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use crate::embedding::{Embedding, Modality};
use crate::http::{HttpRequest, OfflineTransport, RateLimiter, RetryPolicy, Service, Transport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Remote,
    #[default]
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_dimension() -> usize {
    768
}

fn default_max_tokens() -> usize {
    8192
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hashed,
            endpoint: None,
            dimension: default_dimension(),
            max_tokens: default_max_tokens(),
        }
    }
}

impl EmbedderConfig {
    pub fn hashed(dimension: usize) -> Self {
        EmbedderConfig {
            dimension,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 8 {
            return Err(Error::Config(format!(
                "embedder dimension must be >= 8, got {}",
                self.dimension
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be >= 1".into()));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(Error::Config("remote embedder needs an endpoint".into()));
        }
        Ok(())
    }

    /// Builds the embedder. Offline mode swaps the remote transport for one
    /// that refuses every request.
    pub fn build(&self, offline: bool) -> Result<Arc<dyn TextEmbedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Hashed => Arc::new(HashedEmbedder::new(self.dimension, self.max_tokens)),
            EmbedderKind::Remote => {
                let transport: Arc<dyn Transport> = if offline {
                    Arc::new(OfflineTransport)
                } else {
                    Arc::new(crate::http::UreqTransport::default())
                };
                Arc::new(RemoteEmbedder::new(
                    self.endpoint.clone().expect("validated"),
                    self.dimension,
                    Service::new(
                        "embedder",
                        transport,
                        Arc::new(RateLimiter::per_second(10.0)),
                        RetryPolicy::default(),
                    ),
                ))
            }
        })
    }
}

pub trait TextEmbedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Identifies the embedder in persisted indexes and run manifests.
    fn descriptor(&self) -> String;

    /// Embeds each text; output order follows input order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Keeps the first `max_tokens` whitespace-separated tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> std::borrow::Cow<'_, str> {
    let count = text.split_whitespace().count();
    if count <= max_tokens {
        return std::borrow::Cow::Borrowed(text);
    }
    warn!(tokens = count, max_tokens, "input truncated from the tail");
    let kept: Vec<&str> = text.split_whitespace().take(max_tokens.max(1)).collect();
    std::borrow::Cow::Owned(kept.join(" "))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric tokens hashed into `dimension` buckets, counted,
/// and L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    max_tokens: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize, max_tokens: usize) -> Self {
        HashedEmbedder {
            dimension,
            max_tokens,
        }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let text = truncate_tokens(text, self.max_tokens);
        let mut tokens = Self::tokens(&text);
        if tokens.is_empty() {
            // Punctuation-only input: fall back to raw whitespace tokens.
            tokens = text.split_whitespace().map(str::to_string).collect();
        }
        let mut v = vec![0.0; self.dimension];
        for t in &tokens {
            v[(fnv1a(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

impl TextEmbedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn descriptor(&self) -> String {
        format!("hashed:{}:{}", self.dimension, self.max_tokens)
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Client for an embedding server speaking `{texts} -> {vectors}`.
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    service: Service,
    pub batch_size: usize,
    pub concurrency: usize,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: String, dimension: usize, service: Service) -> Self {
        RemoteEmbedder {
            endpoint,
            dimension,
            service,
            batch_size: 16,
            concurrency: 4,
        }
    }

    fn request_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let req = HttpRequest::post_json(&self.endpoint, json!({ "texts": texts }));
        let resp = self.service.send(&req).map_err(|f| {
            Error::Transport(format!("{} after {} retries", f.error, f.retries))
        })?;
        if !resp.is_success() {
            return Err(Error::Transport(format!(
                "embedder returned HTTP {}",
                resp.status
            )));
        }
        let parsed: RemoteResponse = serde_json::from_str(&resp.body)
            .map_err(|e| Error::Transport(format!("malformed embedder response: {e}")))?;
        if parsed.vectors.len() != texts.len() {
            return Err(Error::Transport(format!(
                "embedder returned {} vectors for {} texts",
                parsed.vectors.len(),
                texts.len()
            )));
        }
        for v in &parsed.vectors {
            if v.len() != self.dimension {
                return Err(Error::Dimension {
                    expected: self.dimension,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Transport("embedder returned non-finite values".into()));
            }
        }
        Ok(parsed.vectors)
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn descriptor(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.dimension)
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let batches: Vec<&[&str]> = texts.chunks(self.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(texts.len());
        for group in batches.chunks(self.concurrency.max(1)) {
            let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|b| s.spawn(move || self.request_batch(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedder worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

pub fn embed_text(
    embedder: &dyn TextEmbedder,
    id: &str,
    text: &str,
    modality: Modality,
) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::Embedding {
            ids: vec![id.to_string()],
            message: "empty text".into(),
        });
    }
    let mut vs = embedder.embed_texts(&[text]).map_err(|e| Error::Embedding {
        ids: vec![id.to_string()],
        message: e.to_string(),
    })?;
    Embedding::new(id, vs.pop().expect("one vector per text"), modality)
}

/// Order-preserving batch embedding. Any invalid item fails the whole batch.
pub fn embed_batch(
    embedder: &dyn TextEmbedder,
    items: &[(String, String)],
    modality: Modality,
) -> Result<Vec<Embedding>> {
    let empty: Vec<String> = items
        .iter()
        .filter(|(_, t)| t.trim().is_empty())
        .map(|(id, _)| id.clone())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Embedding {
            ids: empty,
            message: "empty text".into(),
        });
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = items.iter().map(|(_, t)| t.as_str()).collect();
    let vectors = embedder.embed_texts(&texts).map_err(|e| Error::Embedding {
        ids: items.iter().map(|(id, _)| id.clone()).collect(),
        message: e.to_string(),
    })?;
    items
        .iter()
        .zip(vectors)
        .map(|((id, _), v)| Embedding::new(id.clone(), v, modality))
        .collect()
}
