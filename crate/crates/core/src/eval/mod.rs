//! Comparison of generated notes against ground truth.
//!
//! Distances are cosine distances between encoder outputs, computed two ways:
//! on the summary (`[CLS]`) vectors and on the mean of the token vectors.

mod embed;
mod report;
pub mod stats;
mod svg;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

pub use embed::{HttpTokenEmbedder, StubTokenEmbedder, TokenEmbedding, TokenEmbeddingProvider};
pub use report::{
    emit_report, evaluate, format_real, DistanceSample, EvalOptions, EvalReport, KdeCurve, Metric,
    MetricSummary, TokenTable,
};
pub use stats::{bootstrap_ci, box_stats, kde, BoxStats};

use crate::error::{Error, Result};
use crate::index::{cosine_distance, cosine_similarity};

fn embed_checked(embedder: &dyn TokenEmbeddingProvider, text: &str) -> Result<TokenEmbedding> {
    if text.trim().is_empty() {
        return Err(Error::EmptyTokens);
    }
    let emb = embedder.embed_tokens(text)?;
    emb.validate()?;
    if emb.truncated {
        log::warn!(
            "text of {} chars truncated by {} to {} tokens",
            text.len(),
            embedder.tag(),
            emb.tokens.len()
        );
    }
    Ok(emb)
}

/// `(cls_distance, mean_distance)` between two already encoded texts.
pub fn embedding_distances(gt: &TokenEmbedding, generated: &TokenEmbedding) -> Result<(f64, f64)> {
    let cls = cosine_distance(&gt.summary_vector, &generated.summary_vector)?;
    let mean = cosine_distance(&gt.mean_vector(), &generated.mean_vector())?;
    Ok((cls, mean))
}

pub fn sentence_distances(
    gt_text: &str,
    gen_text: &str,
    embedder: &dyn TokenEmbeddingProvider,
) -> Result<(f64, f64)> {
    let gt = embed_checked(embedder, gt_text)?;
    let generated = embed_checked(embedder, gen_text)?;
    embedding_distances(&gt, &generated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Moderate,
    High,
}

impl Band {
    /// Low below 0.3, high above 0.6, moderate in between (inclusive).
    pub fn of(similarity: f64) -> Band {
        if similarity < 0.3 {
            Band::Low
        } else if similarity <= 0.6 {
            Band::Moderate
        } else {
            Band::High
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Moderate => "moderate",
            Band::High => "high",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSimilarity {
    pub gt_token: String,
    pub best_gen_token: String,
    pub similarity: f64,
    pub band: Band,
}

/// Greedy alignment: each ground-truth token is paired with the generated
/// token whose vector is most similar (the earliest one on ties).
pub fn token_similarities(gt: &TokenEmbedding, generated: &TokenEmbedding) -> Result<Vec<TokenSimilarity>> {
    if generated.tokens.is_empty() {
        return Err(Error::EmptyTokens);
    }
    gt.tokens
        .iter()
        .zip(&gt.vectors)
        .map(|(tok, v)| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, w) in generated.vectors.iter().enumerate() {
                let s = cosine_similarity(v, w)?;
                if s > best.1 {
                    best = (j, s);
                }
            }
            Ok(TokenSimilarity {
                gt_token: tok.clone(),
                best_gen_token: generated.tokens[best.0].clone(),
                similarity: best.1,
                band: Band::of(best.1),
            })
        })
        .collect()
}

pub fn token_similarity_table(
    gt_text: &str,
    gen_text: &str,
    embedder: &dyn TokenEmbeddingProvider,
) -> Result<Vec<TokenSimilarity>> {
    let gt = embed_checked(embedder, gt_text)?;
    let generated = embed_checked(embedder, gen_text)?;
    token_similarities(&gt, &generated)
}

/// Applies `f` to every item on up to `workers` threads, keeping input order.
pub(crate) fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .expect("every slot filled")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle_cos_dist(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    }

    #[test]
    fn identical_texts_have_zero_distance() {
        let e = StubTokenEmbedder::new(32, 5);
        let (c, m) = sentence_distances("Pain in the jaw.", "Pain in the jaw.", &e).unwrap();
        assert!(c.abs() < 1e-6 && m.abs() < 1e-6);
    }

    #[test]
    fn distances_match_independent_formula() {
        let e = StubTokenEmbedder::new(48, 11);
        let gt = "Complete loss of teeth with mucosal irritation";
        let generated = "Patient reports toothache and jaw pain";
        let (c, m) = sentence_distances(gt, generated, &e).unwrap();

        // Rebuild both vectors from the per-word stub vectors.
        let enc = |t: &str| {
            let toks: Vec<&str> = t.split_whitespace().collect();
            let vs: Vec<Vec<f64>> = toks.iter().map(|w| e.token_vector(w)).collect();
            let mut mean = vec![0.0; 48];
            for v in &vs {
                for (a, x) in mean.iter_mut().zip(v) {
                    *a += x / vs.len() as f64;
                }
            }
            let emb = e.embed_tokens(t).unwrap();
            (emb.summary_vector, mean)
        };
        let (gs, gm) = enc(gt);
        let (ns, nm) = enc(generated);
        assert!((c - oracle_cos_dist(&gs, &ns)).abs() < 1e-12);
        assert!((m - oracle_cos_dist(&gm, &nm)).abs() < 1e-12);
        assert!(c > 0.0 && c <= 2.0 && m > 0.0 && m <= 2.0);
    }

    #[test]
    fn empty_inputs_error() {
        let e = StubTokenEmbedder::new(8, 1);
        assert!(matches!(sentence_distances("", "x", &e), Err(Error::EmptyTokens)));
        assert!(matches!(sentence_distances("x", " ... ", &e), Err(Error::EmptyTokens)));
    }

    #[test]
    fn truncation_is_flagged() {
        let e = StubTokenEmbedder::new(8, 1).with_max_tokens(3);
        let emb = e.embed_tokens("one two three four five").unwrap();
        assert!(emb.truncated);
        assert_eq!(emb.tokens, ["one", "two", "three"]);
        assert!(!e.embed_tokens("one two").unwrap().truncated);
    }

    #[test]
    fn bands() {
        assert_eq!(Band::of(0.29), Band::Low);
        assert_eq!(Band::of(0.3), Band::Moderate);
        assert_eq!(Band::of(0.45), Band::Moderate);
        assert_eq!(Band::of(0.6), Band::Moderate);
        assert_eq!(Band::of(0.61), Band::High);
    }

    #[test]
    fn token_table_identical_and_disjoint() {
        let e = StubTokenEmbedder::new(64, 2);
        let t = "Edentulous mandible and maxilla";
        let rows = token_similarity_table(t, t, &e).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| (r.similarity - 1.0).abs() < 1e-12 && r.band == Band::High));
        assert!(rows.iter().all(|r| r.gt_token == r.best_gen_token));
        let rows = token_similarity_table(t, "fever cough", &e).unwrap();
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u32> = (0..100).collect();
        assert_eq!(par_map(&xs, 7, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(par_map(&Vec::<u32>::new(), 3, |x| *x).is_empty());
    }

    proptest! {
        #[test]
        fn distances_symmetric(a in "[a-z]{1,8}( [a-z]{1,8}){0,6}", b in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            let e = StubTokenEmbedder::new(16, 3);
            let (c1, m1) = sentence_distances(&a, &b, &e).unwrap();
            let (c2, m2) = sentence_distances(&b, &a, &e).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
            prop_assert!((m1 - m2).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&c1) && (0.0..=2.0).contains(&m1));
        }

        #[test]
        fn token_table_length(a in "[a-z]{1,8}( [a-z]{1,8}){0,9}", b in "[a-z]{1,8}( [a-z]{1,8}){0,9}") {
            let e = StubTokenEmbedder::new(16, 3);
            let rows = token_similarity_table(&a, &b, &e).unwrap();
            prop_assert_eq!(rows.len(), a.split_whitespace().count());
        }
    }
}
