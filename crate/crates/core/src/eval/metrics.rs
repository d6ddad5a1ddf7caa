use std::collections::BTreeMap;

use super::{EvalError, Qrels, Run, RunEntry};

/// Grades at or above this count as relevant for MAP and recall.
pub const DEFAULT_THRESHOLD: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn of(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Queries left out of a mean, and why.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// In the run but absent from the qrels.
    pub missing_from_qrels: Vec<String>,
    /// Judged but absent from the run.
    pub missing_from_run: Vec<String>,
    /// Judged, but nothing relevant (zero ideal gain, or R = 0).
    pub no_relevant: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricValues {
    pub per_query: BTreeMap<String, f64>,
    /// Mean over `per_query`; 0 when no query qualifies.
    pub mean: f64,
    pub diagnostics: Diagnostics,
}

/// Shared driver: `score` returns `None` for a query that must be excluded.
fn per_query<F>(run: &Run, qrels: &Qrels, mut score: F) -> MetricValues
where
    F: FnMut(&[RunEntry], &BTreeMap<String, u32>) -> Option<f64>,
{
    let mut out = MetricValues::default();
    for (qid, rows) in run.iter() {
        match qrels.query(qid) {
            None => out.diagnostics.missing_from_qrels.push(qid.to_string()),
            Some(judged) => match score(rows, judged) {
                Some(v) => {
                    out.per_query.insert(qid.to_string(), v);
                }
                None => out.diagnostics.no_relevant.push(qid.to_string()),
            },
        }
    }
    out.diagnostics.missing_from_run = qrels
        .query_ids()
        .filter(|q| run.get(q).is_none())
        .map(str::to_string)
        .collect();
    if !out.per_query.is_empty() {
        out.mean = out.per_query.values().sum::<f64>() / out.per_query.len() as f64;
    }
    out
}

fn check_k(k: usize) -> Result<(), EvalError> {
    if k == 0 {
        Err(EvalError::InvalidDepth)
    } else {
        Ok(())
    }
}

fn check_threshold(threshold: u32) -> Result<(), EvalError> {
    if threshold == 0 {
        Err(EvalError::InvalidThreshold)
    } else {
        Ok(())
    }
}

fn grade_of(judged: &BTreeMap<String, u32>, item: &str) -> u32 {
    judged.get(item).copied().unwrap_or(0)
}

/// NDCG@k with a `log2(rank + 1)` discount. Unjudged items have grade 0.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize, gain: Gain) -> Result<MetricValues, EvalError> {
    check_k(k)?;
    let discount = |i: usize| ((i + 2) as f64).log2();
    Ok(per_query(run, qrels, |rows, judged| {
        let dcg: f64 = rows
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, r)| gain.of(grade_of(judged, &r.item_id)) / discount(i))
            .sum();
        let mut ideal: Vec<u32> = judged.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain.of(g) / discount(i))
            .sum();
        (idcg > 0.0).then(|| dcg / idcg)
    }))
}

/// Average precision over the top `k`, normalized by every relevant item in
/// the qrels (not only the retrieved ones).
pub fn map_at_k(run: &Run, qrels: &Qrels, k: usize, threshold: u32) -> Result<MetricValues, EvalError> {
    check_k(k)?;
    check_threshold(threshold)?;
    Ok(per_query(run, qrels, |rows, judged| {
        let total = judged.values().filter(|&&g| g >= threshold).count();
        if total == 0 {
            return None;
        }
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, r) in rows.iter().take(k).enumerate() {
            if grade_of(judged, &r.item_id) >= threshold {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        Some(sum / total as f64)
    }))
}

pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize, threshold: u32) -> Result<MetricValues, EvalError> {
    check_k(k)?;
    check_threshold(threshold)?;
    Ok(per_query(run, qrels, |rows, judged| {
        let total = judged.values().filter(|&&g| g >= threshold).count();
        if total == 0 {
            return None;
        }
        let found = rows
            .iter()
            .take(k)
            .filter(|r| grade_of(judged, &r.item_id) >= threshold)
            .count();
        Some(found as f64 / total as f64)
    }))
}
