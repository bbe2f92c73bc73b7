use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing;
use crate::http::{join_url, JsonClient};
use crate::index::check_vector;

/// Encoder output for one text: a vector per token plus the sequence-level
/// summary vector (the `[CLS]` position for BERT-style encoders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedding {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub summary_vector: Vec<f64>,
    /// Set when the encoder cut the text at its window limit.
    #[serde(default)]
    pub truncated: bool,
}

impl TokenEmbedding {
    pub fn dim(&self) -> usize {
        self.summary_vector.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        if self.tokens.len() != self.vectors.len() {
            return Err(Error::Provider(format!(
                "{} tokens but {} vectors",
                self.tokens.len(),
                self.vectors.len()
            )));
        }
        let dim = self.dim();
        if let Some(v) = self.vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimMismatch {
                left: dim,
                right: v.len(),
            });
        }
        check_vector(&self.summary_vector)?;
        for v in &self.vectors {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    /// Average of the per-token vectors; the summary position is not included.
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for v in &self.vectors {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = self.vectors.len().max(1) as f64;
        acc.into_iter().map(|x| x / n).collect()
    }
}

pub trait TokenEmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbedding>;
}

/// Offline token encoder. Each lowercased word gets a seeded pseudo-random
/// vector; the summary vector is a position-weighted sum of the token
/// vectors plus a fixed bias vector, so it depends on word order as well as
/// vocabulary.
#[derive(Debug, Clone)]
pub struct StubTokenEmbedder {
    dim: usize,
    seed: u64,
    max_tokens: Option<usize>,
    tag: String,
}

impl StubTokenEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        StubTokenEmbedder {
            dim,
            seed,
            max_tokens: None,
            tag: format!("stub-tokens-{dim}-{seed}"),
        }
    }

    /// Mimics an encoder window: longer texts are cut and flagged.
    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = Some(max_tokens.max(1));
        self
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let w = token.to_lowercase();
        hashing::hashed_vector(&[b"token", &self.seed.to_le_bytes(), w.as_bytes()], self.dim)
    }
}

impl TokenEmbeddingProvider for StubTokenEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbedding> {
        let mut tokens: Vec<String> = hashing::words(text).map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        let truncated = self.max_tokens.is_some_and(|m| tokens.len() > m);
        if let Some(m) = self.max_tokens {
            tokens.truncate(m);
        }
        let vectors: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        let mut summary =
            hashing::hashed_vector(&[b"summary-bias", &self.seed.to_le_bytes()], self.dim);
        for (i, v) in vectors.iter().enumerate() {
            let w = 1.0 / (1.0 + i as f64).sqrt();
            for (s, x) in summary.iter_mut().zip(v) {
                *s += w * x;
            }
        }
        Ok(TokenEmbedding {
            tokens,
            vectors,
            summary_vector: summary,
            truncated,
        })
    }
}

#[derive(Debug, Serialize)]
struct EmbedTokensRequest<'a> {
    model: &'a str,
    text: &'a str,
}

/// Client for a `POST /embed_tokens` service.
pub struct HttpTokenEmbedder {
    base_url: String,
    model: String,
    client: JsonClient,
}

impl HttpTokenEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        Ok(HttpTokenEmbedder {
            base_url: base_url.into(),
            model: model.into(),
            client: JsonClient::new(None, Duration::from_secs(120)).map_err(Error::Provider)?,
        })
    }
}

impl TokenEmbeddingProvider for HttpTokenEmbedder {
    fn tag(&self) -> &str {
        &self.model
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbedding> {
        let emb: TokenEmbedding = self
            .client
            .post(
                &join_url(&self.base_url, "embed_tokens"),
                &EmbedTokensRequest {
                    model: &self.model,
                    text,
                },
            )
            .map_err(Error::Provider)?;
        emb.validate()?;
        Ok(emb)
    }
}
