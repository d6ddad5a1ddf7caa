//! Point-wise and pair-wise scorer seams plus the built-in term-overlap scorer.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::lexical::tokenize;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("no response within the timeout for request ids {pending:?} ({answered} answered)")]
    Timeout { pending: Vec<u64>, answered: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("scorer unreachable: {0}")]
    Unreachable(String),
    #[error("no text for item {0:?}")]
    MissingText(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores (query, document) pairs independently, in [0, 1].
pub trait PointwiseScorer: Send + Sync {
    fn score(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, ScorerError>;
}

/// Scores ordered pairs: the probability that the first document is more
/// relevant than the second.
pub trait PairwiseScorer: Send + Sync {
    fn score_pairs(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

/// Fraction of distinct query terms that occur in the document.
pub fn builtin_overlap_score(query_text: &str, doc_text: &str) -> f64 {
    let query: HashSet<String> = tokenize(query_text).into_iter().collect();
    if query.is_empty() {
        return 0.0;
    }
    let doc: HashSet<String> = tokenize(doc_text).into_iter().collect();
    query.intersection(&doc).count() as f64 / query.len() as f64
}

/// `0.5 + (overlap(q, a) - overlap(q, b)) / 2`, clamped to [0, 1].
///
/// The lower half is computed as `1 - p(b, a)` so that
/// `p(a, b) + p(b, a) == 1` holds exactly in floating point.
pub fn builtin_pair_score(query_text: &str, doc_a: &str, doc_b: &str) -> f64 {
    let a = builtin_overlap_score(query_text, doc_a);
    let b = builtin_overlap_score(query_text, doc_b);
    let upper = |d: f64| (0.5 + d / 2.0).clamp(0.0, 1.0);
    if a >= b {
        upper(a - b)
    } else {
        1.0 - upper(b - a)
    }
}

/// Deterministic stand-in for a neural re-ranker.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl PointwiseScorer for OverlapScorer {
    fn score(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok(docs.iter().map(|d| builtin_overlap_score(query, d)).collect())
    }
}

impl PairwiseScorer for OverlapScorer {
    fn score_pairs(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|(a, b)| builtin_pair_score(query, a, b))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorerKind {
    #[default]
    BuiltinOverlap,
    External,
}

/// Which scorer a stage uses. External scorers need an endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub endpoint: Option<String>,
    pub tag: String,
}

impl ScorerSpec {
    pub fn builtin() -> Self {
        Self {
            kind: ScorerKind::BuiltinOverlap,
            endpoint: None,
            tag: "overlap".into(),
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ScorerKind::External,
            endpoint: Some(endpoint.into()),
            tag: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == ScorerKind::External && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err("external scorer requires an endpoint".into());
        }
        Ok(())
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, &self.endpoint) {
            (ScorerKind::BuiltinOverlap, _) => f.write_str("builtin"),
            (ScorerKind::External, Some(ep)) => write!(f, "external({ep})"),
            (ScorerKind::External, None) => f.write_str("external(?)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_examples() {
        assert_eq!(builtin_overlap_score("a b", "a c"), 0.5);
        assert_eq!(builtin_overlap_score("a", "a a a"), 1.0);
        assert_eq!(builtin_overlap_score("x", "a"), 0.0);
        assert_eq!(builtin_overlap_score("", "anything"), 0.0);
        assert_eq!(builtin_overlap_score("A, a!", "a"), 1.0);
    }

    #[test]
    fn pair_score_is_antisymmetric() {
        let q = "alpha beta gamma";
        let docs = ["alpha", "beta gamma", "", "alpha beta gamma delta"];
        for a in docs {
            for b in docs {
                assert_eq!(builtin_pair_score(q, a, b) + builtin_pair_score(q, b, a), 1.0);
            }
        }
        assert_eq!(builtin_pair_score("a", "a", "b"), 1.0);
        assert_eq!(builtin_pair_score("a", "b", "a"), 0.0);
        assert_eq!(builtin_pair_score("a", "a", "a"), 0.5);
    }

    #[test]
    fn external_spec_needs_endpoint() {
        let mut spec = ScorerSpec::external("tcp://127.0.0.1:1");
        assert!(spec.validate().is_ok());
        spec.endpoint = None;
        assert!(spec.validate().is_err());
        assert!(ScorerSpec::builtin().validate().is_ok());
    }
}
