//! TREC run and qrels files, ranking metrics and run reports.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::rank::{rank_order, RankedList};

pub use metrics::{
    map_at_k, ndcg_at_k, recall_at_k, Diagnostics, Gain, MetricValues, DEFAULT_THRESHOLD,
};
pub use report::{evaluate_run, format_row, render_table, EvalOptions, MetricsReport, ReportDelta, METRIC_NAMES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("duplicate entry for query {query:?}, item {item:?}")]
    DuplicateEntry { query: String, item: String },
    #[error("cutoff k must be at least 1")]
    InvalidDepth,
    #[error("relevance threshold must be at least 1")]
    InvalidThreshold,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub item_id: String,
    pub rank: u32,
    pub score: f64,
}

/// Ranked rows per query. Rows are always held in evaluation order
/// (score descending, item id descending) with ranks 1..n.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub tag: String,
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Set the rows of one query, re-sorting and re-ranking them.
    /// Duplicate items are rejected; an empty list removes the query.
    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        rows: Vec<(String, f64)>,
    ) -> Result<(), EvalError> {
        let query = query_id.into();
        // a query without rows cannot be written, so it is not kept either
        if rows.is_empty() {
            self.queries.remove(&query);
            return Ok(());
        }
        let mut rows = rows;
        rows.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        let mut ids: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(EvalError::DuplicateEntry {
                query,
                item: w[0].to_string(),
            });
        }
        let entries = rows
            .into_iter()
            .enumerate()
            .map(|(i, (item_id, score))| RunEntry {
                item_id,
                rank: i as u32 + 1,
                score,
            })
            .collect();
        self.queries.insert(query, entries);
        Ok(())
    }

    pub fn insert_ranked(&mut self, query_id: impl Into<String>, list: &RankedList) -> Result<(), EvalError> {
        self.insert(
            query_id,
            list.iter().map(|c| (c.item_id.clone(), c.score)).collect(),
        )
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Item ids in rank order for one query.
    pub fn ranking(&self, query_id: &str) -> Vec<&str> {
        self.get(query_id)
            .map(|rows| rows.iter().map(|r| r.item_id.as_str()).collect())
            .unwrap_or_default()
    }
}

/// Round to 6 significant digits and print in plain decimal.
pub fn format_score(score: f64) -> String {
    format!("{}", round_score(score))
}

pub fn round_score(score: f64) -> f64 {
    if score == 0.0 || !score.is_finite() {
        return score + 0.0;
    }
    format!("{score:.5e}").parse().unwrap_or(score)
}

/// Parse `query_id Q0 item_id rank score tag` lines. The rank column is
/// validated but ignored: rows are re-sorted by score, ties by item id.
pub fn parse_run<R: BufRead>(reader: R) -> Result<Run, EvalError> {
    let mut rows: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut tag: Option<String> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| EvalError::Format { line: n + 1, msg };
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        fields[3]
            .parse::<i64>()
            .map_err(|_| bad(format!("non-numeric rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| bad(format!("non-numeric score {:?}", fields[4])))?;
        tag.get_or_insert_with(|| fields[5].to_string());
        rows.entry(fields[0].to_string())
            .or_default()
            .push((fields[2].to_string(), score));
    }
    let mut run = Run::new(tag.unwrap_or_default());
    for (query, list) in rows {
        run.insert(query, list)?;
    }
    Ok(run)
}

/// Write a run in TREC format, scores at 6 significant digits.
///
/// Rows are re-sorted on the rounded scores so the written ranks agree with
/// what [`parse_run`] reconstructs.
pub fn write_run<W: Write>(run: &Run, mut w: W) -> std::io::Result<()> {
    for (query, rows) in &run.queries {
        let mut rounded: Vec<(&str, f64)> = rows
            .iter()
            .map(|r| (r.item_id.as_str(), round_score(r.score)))
            .collect();
        rounded.sort_by(|a, b| rank_order(a.1, a.0, b.1, b.0));
        for (i, (item, score)) in rounded.into_iter().enumerate() {
            writeln!(w, "{query} Q0 {item} {} {} {}", i + 1, score, run.tag)?;
        }
    }
    w.flush()
}

/// Graded judgments keyed by query then item.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, item: &str, grade: u32) -> Result<(), EvalError> {
        let slot = self.judgments.entry(query.to_string()).or_default();
        if slot.insert(item.to_string(), grade).is_some() {
            return Err(EvalError::DuplicateEntry {
                query: query.to_string(),
                item: item.to_string(),
            });
        }
        Ok(())
    }

    pub fn grade(&self, query: &str, item: &str) -> u32 {
        self.judgments
            .get(query)
            .and_then(|q| q.get(item))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, items)| items.iter().map(move |(i, g)| (q.as_str(), i.as_str(), *g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parse `query_id iteration item_id grade` lines.
pub fn parse_qrels<R: BufRead>(reader: R) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| EvalError::Format { line: n + 1, msg };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("non-numeric grade {:?}", fields[3])))?;
        let grade = u32::try_from(grade).map_err(|_| bad(format!("grade {grade} out of range")))?;
        qrels.insert(fields[0], fields[2], grade)?;
    }
    Ok(qrels)
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut w: W) -> std::io::Result<()> {
    for (q, item, grade) in qrels.iter() {
        writeln!(w, "{q} 0 {item} {grade}")?;
    }
    w.flush()
}
