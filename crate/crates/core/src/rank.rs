//! Scored candidates and the ordering rule shared by every stage.

use std::cmp::Ordering;
use std::fmt;

/// Which stage produced a candidate's current score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Sparse,
    Dense,
    Fused,
    Mono,
    Duo,
    Ensemble,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sparse => "sparse",
            Stage::Dense => "dense",
            Stage::Fused => "fused",
            Stage::Mono => "mono",
            Stage::Duo => "duo",
            Stage::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub item_id: String,
    pub score: f64,
    pub stage: Stage,
}

impl ScoredCandidate {
    pub fn new(item_id: impl Into<String>, score: f64, stage: Stage) -> Self {
        Self {
            item_id: item_id.into(),
            score,
            stage,
        }
    }
}

/// Candidates for one query, best first.
pub type RankedList = Vec<ScoredCandidate>;

/// Score descending, then item id descending (byte-wise lexicographic).
///
/// This is the order the evaluator re-sorts run rows into, so ranks agree
/// between the engine and the metrics.
#[inline]
pub fn rank_order(score_a: f64, id_a: &str, score_b: f64, id_b: &str) -> Ordering {
    score_b.total_cmp(&score_a).then_with(|| id_b.cmp(id_a))
}

pub fn cmp_candidates(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    rank_order(a.score, &a.item_id, b.score, &b.item_id)
}

/// Sort by [`rank_order`] and keep the first `k`.
pub fn sort_and_truncate(list: &mut RankedList, k: usize) {
    list.sort_by(cmp_candidates);
    list.truncate(k);
}
