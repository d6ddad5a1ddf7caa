//! Combining ranked lists: reciprocal rank fusion, union, and run ensembles.

use std::collections::{BTreeMap, BTreeSet};

use crate::eval::Run;
use crate::rank::{sort_and_truncate, RankedList, ScoredCandidate, Stage};
use crate::Error;

pub const DEFAULT_RRF_C: f64 = 60.0;

/// `score(item) = sum over lists containing it of 1 / (c + rank)`, ranks
/// starting at 1. Keeps the top `k`.
///
/// # Panics
///
/// If `c` is not a positive finite number.
pub fn fuse_rrf(lists: &[RankedList], c: f64, k: usize) -> RankedList {
    assert!(c.is_finite() && c > 0.0, "rrf constant must be positive, got {c}");
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (i, cand) in list.iter().enumerate() {
            *acc.entry(cand.item_id.as_str()).or_insert(0.0) += 1.0 / (c + (i + 1) as f64);
        }
    }
    collect_fused(acc, k)
}

/// Every item from every list, ordered by its best rank in any list.
/// The score is `1 / best_rank`.
pub fn fuse_union(lists: &[RankedList], k: usize) -> RankedList {
    let mut best: BTreeMap<&str, usize> = BTreeMap::new();
    for list in lists {
        for (i, cand) in list.iter().enumerate() {
            let r = best.entry(cand.item_id.as_str()).or_insert(i + 1);
            *r = (*r).min(i + 1);
        }
    }
    collect_fused(best.into_iter().map(|(id, r)| (id, 1.0 / r as f64)), k)
}

fn collect_fused<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>, k: usize) -> RankedList {
    let mut out: RankedList = scores
        .into_iter()
        .map(|(id, s)| ScoredCandidate::new(id, s, Stage::Fused))
        .collect();
    sort_and_truncate(&mut out, k);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnsembleMethod {
    /// Per query, min-max normalize each run to [0, 1] (a constant run maps
    /// to 1.0), then average each item over the runs that contain it.
    MeanNormalized,
    Rrf { c: f64 },
}

/// Fuse runs from several re-rankers into one. Every run must cover the
/// same queries. The output keeps every item and takes the first run's tag.
pub fn ensemble_fuse(runs: &[Run], method: EnsembleMethod) -> Result<Run, Error> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one run".into()))?;
    let queries: BTreeSet<&str> = first.query_ids().collect();
    for r in &runs[1..] {
        if r.query_ids().collect::<BTreeSet<_>>() != queries {
            return Err(Error::Config(format!(
                "runs {:?} and {:?} cover different query sets",
                first.tag, r.tag
            )));
        }
    }
    let mut out = Run::new(first.tag.clone());
    for q in queries {
        let lists: Vec<RankedList> = runs
            .iter()
            .map(|r| {
                r.get(q)
                    .unwrap_or_default()
                    .iter()
                    .map(|e| ScoredCandidate::new(e.item_id.clone(), e.score, Stage::Ensemble))
                    .collect()
            })
            .collect();
        let depth = lists.iter().map(Vec::len).sum::<usize>().max(1);
        let fused = match method {
            EnsembleMethod::MeanNormalized => mean_normalized(&lists),
            EnsembleMethod::Rrf { c } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Config(format!("rrf constant must be positive, got {c}")));
                }
                fuse_rrf(&lists, c, depth)
            }
        };
        out.insert(q, fused.into_iter().map(|c| (c.item_id, c.score)).collect())?;
    }
    Ok(out)
}

fn mean_normalized(lists: &[RankedList]) -> RankedList {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for list in lists {
        let (lo, hi) = list
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.score), hi.max(c.score)));
        for c in list {
            let norm = if hi > lo { (c.score - lo) / (hi - lo) } else { 1.0 };
            let slot = acc.entry(c.item_id.as_str()).or_insert((0.0, 0));
            slot.0 += norm;
            slot.1 += 1;
        }
    }
    let mut out: RankedList = acc
        .into_iter()
        .map(|(id, (sum, n))| ScoredCandidate::new(id, sum / n as f64, Stage::Ensemble))
        .collect();
    sort_and_truncate(&mut out, usize::MAX);
    out
}
