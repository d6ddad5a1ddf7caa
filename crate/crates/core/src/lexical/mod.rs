//! Tokenization, inverted index and BM25 retrieval.
//!
//! Scoring uses the Robertson/Sparck-Jones weight with the non-negative idf
//! variant:
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(q, d) = sum_{t in q} idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avgdl))
//! ```
//!
//! Query terms are summed as given, so a repeated query term counts twice.

mod persist;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::rank::{sort_and_truncate, RankedList, ScoredCandidate, Stage};

pub use persist::{read_index, write_index};

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("unknown item id {0:?}")]
    UnknownItem(String),
    #[error("query has no terms after tokenization")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidDepth,
    #[error("index file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase, split on every non-alphanumeric character, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the item in [`InvertedIndex::item_ids`].
    pub item: u32,
    pub tf: u32,
}

/// Immutable term -> postings index.
///
/// Items are numbered in ascending id order, so postings sorted by item
/// number are also sorted by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    item_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    /// Build from `(item_id, index_text)` records. Input order does not
    /// affect the result.
    pub fn build<S, T>(records: &[(S, T)], params: Bm25Params) -> Result<Self, IndexError>
    where
        S: AsRef<str> + Sync,
        T: AsRef<str> + Sync,
    {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[a].0.as_ref().cmp(records[b].0.as_ref()));
        for w in order.windows(2) {
            if records[w[0]].0.as_ref() == records[w[1]].0.as_ref() {
                return Err(IndexError::DuplicateId(records[w[0]].0.as_ref().to_string()));
            }
        }

        let term_counts: Vec<(u32, Vec<(String, u32)>)> = order
            .par_iter()
            .map(|&i| count_terms(records[i].1.as_ref()))
            .collect();

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(records.len());
        for (item, (len, counts)) in term_counts.into_iter().enumerate() {
            doc_lengths.push(len);
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    item: item as u32,
                    tf,
                });
            }
        }
        let item_ids = order
            .iter()
            .map(|&i| records[i].0.as_ref().to_string())
            .collect();
        Ok(Self::from_parts(item_ids, doc_lengths, postings, params))
    }

    pub(crate) fn from_parts(
        item_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
        params: Bm25Params,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self {
            item_ids,
            doc_lengths,
            postings,
            avgdl,
            params,
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn doc_length(&self, item_id: &str) -> Option<u32> {
        self.position(item_id).map(|i| self.doc_lengths[i])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    fn position(&self, item_id: &str) -> Option<usize> {
        self.item_ids
            .binary_search_by(|probe| probe.as_str().cmp(item_id))
            .ok()
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.num_items() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// The saturating tf component for one term occurrence count.
    pub fn tf_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = if self.avgdl > 0.0 {
            1.0 - b + b * f64::from(doc_len) / self.avgdl
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn term_score(&self, term: &str, item: usize) -> f64 {
        let list = self.postings(term);
        match list.binary_search_by_key(&(item as u32), |p| p.item) {
            Ok(pos) => self.idf(list.len()) * self.tf_weight(list[pos].tf, self.doc_lengths[item]),
            Err(_) => 0.0,
        }
    }

    pub fn bm25_score<S: AsRef<str>>(&self, query_terms: &[S], item_id: &str) -> Result<f64, IndexError> {
        let item = self
            .position(item_id)
            .ok_or_else(|| IndexError::UnknownItem(item_id.to_string()))?;
        Ok(query_terms
            .iter()
            .map(|t| self.term_score(t.as_ref(), item))
            .fold(0.0, |acc, s| acc + s))
    }

    /// Top-`k` items by BM25 for `query_text`. Items matching no query term
    /// are not returned.
    pub fn search(&self, query_text: &str, k: usize) -> Result<RankedList, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidDepth);
        }
        let terms = tokenize(query_text);
        if terms.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        // Accumulate term-at-a-time in query order; the per-item sum order
        // matches bm25_score so results are bit-identical.
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                let w = idf * self.tf_weight(p.tf, self.doc_lengths[p.item as usize]);
                *acc.entry(p.item).or_insert(0.0) += w;
            }
        }
        let mut hits: RankedList = acc
            .into_iter()
            .map(|(item, score)| {
                ScoredCandidate::new(self.item_ids[item as usize].clone(), score, Stage::Sparse)
            })
            .collect();
        sort_and_truncate(&mut hits, k);
        Ok(hits)
    }
}

fn count_terms(text: &str) -> (u32, Vec<(String, u32)>) {
    let tokens = tokenize(text);
    let len = tokens.len() as u32;
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    (len, counts.into_iter().collect())
}

/// Free-function form of [`InvertedIndex::build`].
pub fn build_index<S, T>(records: &[(S, T)], k1: f64, b: f64) -> Result<InvertedIndex, IndexError>
where
    S: AsRef<str> + Sync,
    T: AsRef<str> + Sync,
{
    InvertedIndex::build(records, Bm25Params { k1, b })
}

pub fn bm25_score<S: AsRef<str>>(
    idx: &InvertedIndex,
    query_terms: &[S],
    item_id: &str,
) -> Result<f64, IndexError> {
    idx.bm25_score(query_terms, item_id)
}

pub fn search_sparse(idx: &InvertedIndex, query_text: &str, k: usize) -> Result<RankedList, IndexError> {
    idx.search(query_text, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> InvertedIndex {
        build_index(&[("d1", "a b"), ("d2", "a c")], 0.9, 0.4).unwrap()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Hello, World!"), ["hello", "world"]);
        assert_eq!(tokenize("T5-base"), ["t5", "base"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" -- ").is_empty());
    }

    #[test]
    fn counts_on_small_corpus() {
        let idx = fixture();
        assert_eq!(idx.num_items(), 2);
        assert_eq!(idx.avgdl(), 2.0);
        assert_eq!(idx.doc_freq("a"), 2);
        assert_eq!(idx.doc_freq("c"), 1);
        assert_eq!(idx.doc_freq("zzz"), 0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn hand_computed_scores() {
        // ln(1 + (2 - 1 + 0.5)/(1 + 0.5)) * 1.9/1.9 = ln 2
        let idx = fixture();
        let c = idx.bm25_score(&["c"], "d2").unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-12);
        assert!((c - 0.6931).abs() < 1e-4);
        assert_eq!(idx.bm25_score(&["c"], "d1").unwrap(), 0.0);
        // ln(1 + 0.5/2.5) = ln 1.2
        let a = idx.bm25_score(&["a"], "d1").unwrap();
        assert!((a - 0.1823).abs() < 1e-4);
    }

    #[test]
    fn search_fixture() {
        let hits = fixture().search("a c", 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].item_id, "d2");
        assert!((hits[0].score - 0.8754).abs() < 1e-4);
        assert_eq!(hits[1].item_id, "d1");
        assert!((hits[1].score - 0.1823).abs() < 1e-4);
        assert!(fixture().search("zzz", 5).unwrap().is_empty());
    }

    #[test]
    fn equal_scores_order_by_id_descending() {
        let idx = build_index(&[("b", "x y"), ("c", "x y"), ("a", "x y")], 0.9, 0.4).unwrap();
        let ids: Vec<_> = idx.search("x", 3).unwrap().into_iter().map(|c| c.item_id).collect();
        assert_eq!(ids, ["c", "b", "a"]);
    }

    #[test]
    fn error_paths() {
        let idx = fixture();
        assert!(matches!(idx.search("!!", 3), Err(IndexError::EmptyQuery)));
        assert!(matches!(idx.search("a", 0), Err(IndexError::InvalidDepth)));
        assert!(matches!(idx.bm25_score(&["a"], "d9"), Err(IndexError::UnknownItem(_))));
        assert!(matches!(
            build_index(&[("d1", "a"), ("d1", "b")], 0.9, 0.4),
            Err(IndexError::DuplicateId(id)) if id == "d1"
        ));
    }

    #[test]
    fn empty_index() {
        let idx = build_index::<&str, &str>(&[], 0.9, 0.4).unwrap();
        assert_eq!(idx.num_items(), 0);
        assert!(idx.search("anything", 10).unwrap().is_empty());
    }

    #[test]
    fn idf_non_negative_over_df_range() {
        let records: Vec<(String, String)> = (0..50).map(|i| (format!("d{i}"), "t".to_string())).collect();
        let idx = build_index(&records, 0.9, 0.4).unwrap();
        for df in 1..=50 {
            assert!(idx.idf(df) >= 0.0);
        }
    }
}
