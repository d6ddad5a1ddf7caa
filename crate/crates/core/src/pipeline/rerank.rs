//! Point-wise (mono) and pair-wise (duo) re-ranking stages.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::rank::{cmp_candidates, sort_and_truncate, RankedList, ScoredCandidate, Stage};
use crate::Error;

use super::scorer::{PairwiseScorer, PointwiseScorer, ScorerError};

/// Looks up the text a re-ranker sees for an item.
pub trait TextSource: Sync {
    fn text(&self, item_id: &str) -> Option<&str>;
}

impl TextSource for HashMap<String, String> {
    fn text(&self, item_id: &str) -> Option<&str> {
        self.get(item_id).map(String::as_str)
    }
}

impl TextSource for BTreeMap<String, String> {
    fn text(&self, item_id: &str) -> Option<&str> {
        self.get(item_id).map(String::as_str)
    }
}

/// A re-ranking stage could not finish.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    /// Candidates that were handed to the scorer.
    pub attempted: usize,
    pub source: ScorerError,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} stage failed after submitting {} candidates: {}",
            self.stage, self.attempted, self.source
        )
    }
}

impl std::error::Error for StageFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn texts_for<'a>(
    items: &[ScoredCandidate],
    texts: &'a dyn TextSource,
    stage: Stage,
) -> Result<Vec<&'a str>, StageFailure> {
    items
        .iter()
        .map(|c| {
            texts.text(&c.item_id).ok_or_else(|| StageFailure {
                stage,
                attempted: 0,
                source: ScorerError::MissingText(c.item_id.clone()),
            })
        })
        .collect()
}

/// Re-score the top `depth` candidates and re-sort them. Anything below
/// `depth` is dropped.
pub fn mono_rerank(
    query: &str,
    candidates: &[ScoredCandidate],
    texts: &dyn TextSource,
    scorer: &dyn PointwiseScorer,
    depth: usize,
) -> Result<RankedList, Error> {
    if depth == 0 {
        return Err(Error::Config("mono depth must be at least 1".into()));
    }
    let head = &candidates[..depth.min(candidates.len())];
    let docs = texts_for(head, texts, Stage::Mono)?;
    let scores = scorer.score(query, &docs).map_err(|source| StageFailure {
        stage: Stage::Mono,
        attempted: docs.len(),
        source,
    })?;
    if scores.len() != head.len() {
        return Err(StageFailure {
            stage: Stage::Mono,
            attempted: docs.len(),
            source: ScorerError::Protocol(format!("{} scores for {} documents", scores.len(), head.len())),
        }
        .into());
    }
    let mut out: RankedList = head
        .iter()
        .zip(scores)
        .map(|(c, s)| ScoredCandidate::new(c.item_id.clone(), s, Stage::Mono))
        .collect();
    sort_and_truncate(&mut out, depth);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// `s_i = sum_{j != i} p_ij`
    Sum,
    /// `s_i = sum_{j != i} (p_ij + 1 - p_ji)`
    #[default]
    SymSum,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregation::Sum),
            "sym-sum" | "symsum" | "sym_sum" => Ok(Aggregation::SymSum),
            other => Err(format!("unknown aggregation {other:?} (expected sum or sym-sum)")),
        }
    }
}

/// Pairwise preferences over `m` items: `p(i, j)` is the probability that
/// item `i` beats item `j`. The diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    ids: Vec<String>,
    p: Vec<f64>,
}

impl PairMatrix {
    /// `p` is row-major `m x m`. Off-diagonal entries must lie in [0, 1].
    pub fn new(ids: Vec<String>, p: Vec<f64>) -> Result<Self, String> {
        let m = ids.len();
        if p.len() != m * m {
            return Err(format!("expected {} entries for {m} items, got {}", m * m, p.len()));
        }
        for i in 0..m {
            for j in 0..m {
                let v = p[i * m + j];
                if i != j && !(0.0..=1.0).contains(&v) {
                    return Err(format!("p[{i}][{j}] = {v} outside [0, 1]"));
                }
            }
        }
        Ok(Self { ids, p })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.ids.len() + j]
    }

    pub fn aggregate(&self, method: Aggregation) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i)
                    .map(|j| match method {
                        Aggregation::Sum => self.get(i, j),
                        Aggregation::SymSum => self.get(i, j) + (1.0 - self.get(j, i)),
                    })
                    .sum()
            })
            .collect()
    }
}

/// Sort `matrix`'s items by aggregated preference, best first.
pub fn order_by_preference(matrix: &PairMatrix, method: Aggregation) -> RankedList {
    let mut out: RankedList = matrix
        .ids()
        .iter()
        .zip(matrix.aggregate(method))
        .map(|(id, s)| ScoredCandidate::new(id.clone(), s, Stage::Duo))
        .collect();
    out.sort_by(cmp_candidates);
    out
}

/// Re-rank the top `m` candidates from all `m * (m - 1)` ordered pair
/// preferences.
///
/// Head items are scored with the aggregate preference. Items below `m`
/// keep their incoming order; their scores are shifted to sit strictly
/// below the head so that re-sorting a written run reproduces this order.
pub fn duo_rerank(
    query: &str,
    candidates: &[ScoredCandidate],
    texts: &dyn TextSource,
    scorer: &dyn PairwiseScorer,
    m: usize,
    method: Aggregation,
) -> Result<RankedList, Error> {
    if m < 2 {
        return Err(Error::Config("duo depth must be at least 2".into()));
    }
    let mut ranked = candidates.to_vec();
    ranked.sort_by(cmp_candidates);
    let tail = ranked.split_off(m.min(ranked.len()));
    let head = ranked;
    let n = head.len();

    let docs = texts_for(&head, texts, Stage::Duo)?;
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pairs.push((docs[i], docs[j]));
            }
        }
    }
    let fail = |source| StageFailure {
        stage: Stage::Duo,
        attempted: pairs.len(),
        source,
    };
    let prefs = scorer.score_pairs(query, &pairs).map_err(fail)?;
    if prefs.len() != pairs.len() {
        return Err(fail(ScorerError::Protocol(format!(
            "{} preferences for {} pairs",
            prefs.len(),
            pairs.len()
        )))
        .into());
    }
    let mut p = vec![0.0; n * n];
    let mut it = prefs.into_iter();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = it.next().expect("length checked");
            }
        }
    }
    let matrix = PairMatrix::new(head.iter().map(|c| c.item_id.clone()).collect(), p)
        .map_err(|e| fail(ScorerError::Protocol(e)))?;
    let mut out = order_by_preference(&matrix, method);

    if let (Some(floor), Some(top)) = (out.last().map(|c| c.score), tail.first().map(|c| c.score)) {
        let shift = floor - 1.0 - top;
        out.extend(
            tail.into_iter()
                .map(|c| ScoredCandidate::new(c.item_id, c.score + shift, c.stage)),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scorer::OverlapScorer;

    /// Strict total order over ids: p = 1 when the first ranks better.
    fn total_order_matrix(best_first: &[&str], listed: &[&str]) -> PairMatrix {
        let pos = |id: &str| best_first.iter().position(|x| *x == id).unwrap();
        let m = listed.len();
        let mut p = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j && pos(listed[i]) < pos(listed[j]) {
                    p[i * m + j] = 1.0;
                }
            }
        }
        PairMatrix::new(listed.iter().map(|s| s.to_string()).collect(), p).unwrap()
    }

    #[test]
    fn aggregation_hand_values() {
        let m = total_order_matrix(&["1", "2", "3"], &["1", "2", "3"]);
        assert_eq!(m.aggregate(Aggregation::SymSum), [4.0, 2.0, 0.0]);
        assert_eq!(m.aggregate(Aggregation::Sum), [2.0, 1.0, 0.0]);
        let order: Vec<_> = order_by_preference(&m, Aggregation::SymSum)
            .into_iter()
            .map(|c| c.item_id)
            .collect();
        assert_eq!(order, ["1", "2", "3"]);
    }

    #[test]
    fn reversed_listing_recovers_order() {
        let m = total_order_matrix(&["1", "2", "3"], &["3", "2", "1"]);
        for method in [Aggregation::Sum, Aggregation::SymSum] {
            let order: Vec<_> = order_by_preference(&m, method).into_iter().map(|c| c.item_id).collect();
            assert_eq!(order, ["1", "2", "3"]);
        }
    }

    #[test]
    fn matrix_validation() {
        assert!(PairMatrix::new(vec!["a".into(), "b".into()], vec![0.0, 1.5, 0.0, 0.0]).is_err());
        assert!(PairMatrix::new(vec!["a".into()], vec![]).is_err());
        // diagonal ignored
        assert!(PairMatrix::new(vec!["a".into()], vec![f64::NAN]).is_ok());
    }

    fn texts() -> HashMap<String, String> {
        [("d1", "alpha"), ("d2", "alpha beta"), ("d3", "gamma"), ("d4", "alpha beta gamma")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn cands(ids: &[&str]) -> RankedList {
        let n = ids.len();
        ids.iter()
            .enumerate()
            .map(|(i, id)| ScoredCandidate::new(*id, (n - i) as f64, Stage::Fused))
            .collect()
    }

    #[test]
    fn mono_sorts_by_overlap() {
        let out = mono_rerank("alpha beta", &cands(&["d3", "d1", "d2"]), &texts(), &OverlapScorer, 3).unwrap();
        let got: Vec<_> = out.iter().map(|c| (c.item_id.as_str(), c.score)).collect();
        assert_eq!(got, [("d2", 1.0), ("d1", 0.5), ("d3", 0.0)]);
        assert!(out.iter().all(|c| c.stage == Stage::Mono));

        let one = mono_rerank("alpha beta", &cands(&["d3", "d1", "d2"]), &texts(), &OverlapScorer, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].item_id, "d3");
    }

    #[test]
    fn missing_text_is_stage_failure() {
        let err = mono_rerank("q", &cands(&["nope"]), &texts(), &OverlapScorer, 5).unwrap_err();
        assert!(matches!(err, Error::Stage(StageFailure { source: ScorerError::MissingText(_), .. })));
    }

    #[test]
    fn duo_permutes_only_the_head() {
        let mono = vec![
            ScoredCandidate::new("d1", 0.9, Stage::Mono),
            ScoredCandidate::new("d3", 0.8, Stage::Mono),
            ScoredCandidate::new("d4", 0.7, Stage::Mono),
            ScoredCandidate::new("d2", 0.6, Stage::Mono),
        ];
        let out = duo_rerank("alpha beta gamma", &mono, &texts(), &OverlapScorer, 3, Aggregation::SymSum).unwrap();
        let ids: Vec<_> = out.iter().map(|c| c.item_id.as_str()).collect();
        // head {d1, d3, d4}: d4 covers everything, d1 and d3 tie on overlap
        assert_eq!(ids, ["d4", "d3", "d1", "d2"]);
        assert!(out.windows(2).all(|w| w[0].score > w[1].score || w[0].item_id > w[1].item_id));
        assert!(out[2].score > out[3].score);
        assert_eq!(out[3].stage, Stage::Mono);
    }

    #[test]
    fn duo_rejects_small_window() {
        let err = duo_rerank("q", &cands(&["d1"]), &texts(), &OverlapScorer, 1, Aggregation::Sum).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn aggregation_parsing() {
        assert_eq!("SYM-SUM".parse::<Aggregation>().unwrap(), Aggregation::SymSum);
        assert_eq!("sum".parse::<Aggregation>().unwrap(), Aggregation::Sum);
        assert!("avg".parse::<Aggregation>().is_err());
    }
}
