//! Exact cosine-similarity search over embedded clinical cases.
//!
//! Relatedness between a query and a case is cosine similarity, the
//! complement of [`cosine_distance`]. Search is an exhaustive scan: every
//! entry is scored and the result is fully ordered, so it always agrees with
//! a brute-force ranking.

use std::cmp::Ordering;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::ClinicalCase;
use crate::error::{Error, Result};
use crate::hashing;
use crate::http::{join_url, JsonClient};
use crate::retry::RetryPolicy;

fn dot_and_norms(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot, aa.sqrt(), bb.sqrt()))
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (dot, na, nb) = dot_and_norms(a, b)?;
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - a·b / (|a| |b|)`, in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

pub(crate) fn check_vector(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if v.iter().all(|x| *x == 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(())
}

/// Produces one fixed-dimension vector per input text.
pub trait EmbeddingProvider: Send + Sync {
    /// Model identifier recorded in every index built with this provider.
    fn tag(&self) -> &str;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Offline provider: each lowercased word maps to a seeded pseudo-random
/// vector and a text embeds as the normalized sum of its word vectors.
/// Texts sharing vocabulary therefore score as related.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
    tag: String,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        StubEmbedder {
            dim,
            seed,
            tag: format!("stub-bow-{dim}-{seed}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::Provider("cannot embed empty text".into()));
        }
        let seed = self.seed.to_le_bytes();
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        for word in hashing::words(text) {
            any = true;
            let w = word.to_lowercase();
            for (a, x) in acc
                .iter_mut()
                .zip(hashing::hashed_vector(&[&seed, w.as_bytes()], self.dim))
            {
                *a += x;
            }
        }
        if !any {
            acc = hashing::hashed_vector(&[&seed, text.as_bytes()], self.dim);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Provider("degenerate stub embedding".into()));
        }
        Ok(acc.into_iter().map(|x| x / norm).collect())
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for a `POST /embed` service.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        Ok(HttpEmbedder {
            base_url: base_url.into(),
            model: model.into(),
            client: JsonClient::new(None, Duration::from_secs(120)).map_err(Error::Provider)?,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp: EmbedResponse = self
            .client
            .post(
                &join_url(&self.base_url, "embed"),
                &EmbedRequest {
                    model: &self.model,
                    texts,
                },
            )
            .map_err(Error::Provider)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Provider(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(Error::Provider(format!(
                "declared dim {} but a vector has {}",
                resp.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub case_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub case_id: String,
    pub relatedness: f64,
}

/// Relatedness descending, then case id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.relatedness
        .total_cmp(&a.relatedness)
        .then_with(|| a.case_id.cmp(&b.case_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    IcdCodes,
    TextReferences,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::IcdCodes => "icd_codes",
            QueryMode::TextReferences => "text_references",
        }
    }
}

/// Comma-space join of the selected field, as sent to the embedder.
pub fn query_text(case: &ClinicalCase, mode: QueryMode) -> Result<String> {
    let field = match mode {
        QueryMode::IcdCodes => &case.icd_codes,
        QueryMode::TextReferences => &case.text_references,
    };
    if field.is_empty() {
        return Err(Error::EmptyQueryField {
            case_id: case.case_id.clone(),
            mode: mode.name().to_owned(),
        });
    }
    Ok(field.join(", "))
}

pub const DEFAULT_TOP_K: usize = 10;

const MAGIC: &[u8; 4] = b"NGIX";
const FORMAT_VERSION: u16 = 1;
const EMBED_BATCH: usize = 32;

/// Immutable set of embedded cases sharing one provider and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    provider_tag: String,
    dim: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
}

impl Index {
    pub fn from_entries(
        provider_tag: impl Into<String>,
        dim: usize,
        entries: Vec<IndexEntry>,
    ) -> Result<Index> {
        let mut norms = Vec::with_capacity(entries.len());
        for e in &entries {
            if e.vector.len() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: e.vector.len(),
                });
            }
            check_vector(&e.vector)?;
            norms.push(e.vector.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        Ok(Index {
            provider_tag: provider_tag.into(),
            dim,
            entries,
            norms,
        })
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Ranks every entry against an already-embedded query vector.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::InvalidK(0));
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                left: self.dim,
                right: query.len(),
            });
        }
        check_vector(query)?;
        let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut hits: Vec<SearchHit> = self
            .entries
            .iter()
            .zip(&self.norms)
            .map(|(e, n)| {
                let dot: f64 = e.vector.iter().zip(query).map(|(a, b)| a * b).sum();
                SearchHit {
                    case_id: e.case_id.clone(),
                    relatedness: (dot / (n * qn)).clamp(-1.0, 1.0),
                }
            })
            .collect();
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ok(hits)
    }

    /// Embeds `query` with `provider` (which must match the index's tag) and
    /// returns the `min(k, len)` most related cases.
    pub fn search(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &str,
        k: usize,
    ) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::InvalidK(0));
        }
        if query.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        if provider.tag() != self.provider_tag {
            return Err(Error::ProviderMismatch {
                index: self.provider_tag.clone(),
                provider: provider.tag().to_owned(),
            });
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let mut vectors = provider.embed(&[query.to_owned()])?;
        let v = vectors
            .pop()
            .ok_or_else(|| Error::Provider("no vector returned for query".into()))?;
        self.search_vector(&v, k)
    }

    pub fn query_for_case(
        &self,
        provider: &dyn EmbeddingProvider,
        case: &ClinicalCase,
        mode: QueryMode,
        k: usize,
    ) -> Result<Vec<SearchHit>> {
        self.search(provider, &query_text(case, mode)?, k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.entries.len() * (self.dim * 8 + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        put_str(&mut out, &self.provider_tag);
        for e in &self.entries {
            put_str(&mut out, &e.case_id);
            for x in &e.vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Index> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(r)?);
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(r)?) as usize;
        let count = u64::from_le_bytes(take(r)?) as usize;
        let provider_tag = get_str(r)?;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let case_id = get_str(r)?;
            let vector = (0..dim)
                .map(|_| take(r).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            entries.push(IndexEntry { case_id, vector });
        }
        if !r.is_empty() {
            return Err(Error::IndexFormat("trailing bytes".into()));
        }
        Index::from_entries(provider_tag, dim, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Index> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Index::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::IndexFormat("truncated file".into()))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let len = u32::from_le_bytes(take(r)?) as usize;
    if len > r.len() {
        return Err(Error::IndexFormat("truncated string".into()));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::IndexFormat("invalid UTF-8".into()))
}

/// Embeds each case's note text. Batches that still fail after `retry` are
/// collected and reported together as [`Error::EmbeddingFailed`].
pub fn build_index<'a>(
    cases: impl IntoIterator<Item = &'a ClinicalCase>,
    provider: &dyn EmbeddingProvider,
    retry: &RetryPolicy,
) -> Result<Index> {
    let cases: Vec<&ClinicalCase> = cases.into_iter().collect();
    let mut entries = Vec::with_capacity(cases.len());
    let mut failed = Vec::new();
    let mut dim = None;
    for chunk in cases.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|c| c.note_text.clone()).collect();
        match retry.run(|_| provider.embed(&texts)) {
            Ok(vectors) if vectors.len() == chunk.len() => {
                for (case, vector) in chunk.iter().zip(vectors) {
                    let d = *dim.get_or_insert(vector.len());
                    if vector.len() != d || check_vector(&vector).is_err() {
                        failed.push(case.case_id.clone());
                        continue;
                    }
                    entries.push(IndexEntry {
                        case_id: case.case_id.clone(),
                        vector,
                    });
                }
            }
            Ok(_) => failed.extend(chunk.iter().map(|c| c.case_id.clone())),
            Err((e, attempts)) => {
                log::error!("embedding batch failed after {attempts} attempts: {e}");
                failed.extend(chunk.iter().map(|c| c.case_id.clone()));
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::EmbeddingFailed(failed));
    }
    Index::from_entries(provider.tag(), dim.unwrap_or(0), entries)
}
