//! Brute-force reference implementations, written from the formulas and
//! sharing no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

/// Score descending, then id descending.
pub fn tie_sort(rows: &mut [(String, f64)]) {
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| b.0.cmp(&a.0)));
}

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Every document that contains at least one query term, scored by
/// recounting terms from the raw text.
pub fn bm25_exhaustive(docs: &[(String, String)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<(String, Vec<String>)> = docs.iter().map(|(id, t)| (id.clone(), words(t))).collect();
    let n = toks.len() as f64;
    let avgdl = if toks.is_empty() {
        0.0
    } else {
        toks.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n
    };
    let df: HashMap<&str, f64> = query
        .iter()
        .map(|q| {
            let n = toks.iter().filter(|(_, t)| t.iter().any(|w| w == q)).count();
            (q.as_str(), n as f64)
        })
        .collect();
    let mut out = Vec::new();
    for (id, t) in &toks {
        let mut score = 0.0;
        let mut matched = false;
        for q in query {
            let tf = t.iter().filter(|w| *w == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let d = df[q.as_str()];
            let idf = (1.0 + (n - d + 0.5) / (d + 0.5)).ln();
            let norm = if avgdl > 0.0 { 1.0 - b + b * t.len() as f64 / avgdl } else { 1.0 };
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        if matched {
            out.push((id.clone(), score));
        }
    }
    tie_sort(&mut out);
    out
}

/// MaxSim in f64 with nested loops.
pub fn maxsim(query: &[Vec<f32>], doc: &[Vec<f32>]) -> f64 {
    let mut total = 0.0;
    for q in query {
        let mut best = f64::NEG_INFINITY;
        for d in doc {
            let mut dot = 0.0f64;
            for i in 0..q.len() {
                dot += q[i] as f64 * d[i] as f64;
            }
            if dot > best {
                best = dot;
            }
        }
        total += best;
    }
    total
}

/// Window start offsets: step by `stride` until a window reaches the end.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let extra = (n - window).div_ceil(stride);
    (0..=extra).map(|i| i * stride).collect()
}

pub fn rrf(lists: &[Vec<String>], c: f64) -> Vec<(String, f64)> {
    let mut acc: HashMap<String, f64> = HashMap::new();
    for l in lists {
        for (i, id) in l.iter().enumerate() {
            *acc.entry(id.clone()).or_default() += 1.0 / (c + i as f64 + 1.0);
        }
    }
    let mut out: Vec<(String, f64)> = acc.into_iter().collect();
    tie_sort(&mut out);
    out
}

pub type Grades = HashMap<String, u32>;

fn gain(g: u32, exponential: bool) -> f64 {
    if exponential {
        (1u64 << g) as f64 - 1.0
    } else {
        g as f64
    }
}

pub fn ndcg(ranking: &[String], grades: &Grades, k: usize, exponential: bool) -> Option<f64> {
    let mut dcg = 0.0;
    for (i, id) in ranking.iter().enumerate().take(k) {
        let g = grades.get(id).copied().unwrap_or(0);
        dcg += gain(g, exponential) / ((i + 2) as f64).log2();
    }
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort();
    ideal.reverse();
    let mut idcg = 0.0;
    for (i, g) in ideal.iter().enumerate().take(k) {
        idcg += gain(*g, exponential) / ((i + 2) as f64).log2();
    }
    if idcg == 0.0 {
        None
    } else {
        Some(dcg / idcg)
    }
}

pub fn average_precision(ranking: &[String], grades: &Grades, k: usize, threshold: u32) -> Option<f64> {
    let relevant = grades.values().filter(|g| **g >= threshold).count();
    if relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..ranking.len().min(k) {
        let rel = |id: &String| grades.get(id).is_some_and(|g| *g >= threshold);
        if rel(&ranking[i]) {
            let hits = ranking[..=i].iter().filter(|id| rel(id)).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant as f64)
}

pub fn recall(ranking: &[String], grades: &Grades, k: usize, threshold: u32) -> Option<f64> {
    let relevant = grades.values().filter(|g| **g >= threshold).count();
    if relevant == 0 {
        return None;
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|id| grades.get(*id).is_some_and(|g| *g >= threshold))
        .count();
    Some(found as f64 / relevant as f64)
}

/// Mean over queries present in both the run and the qrels for which
/// `metric` is defined; 0 if there are none.
pub fn mean_metric(
    run: &BTreeMap<String, Vec<(String, f64)>>,
    qrels: &BTreeMap<String, Grades>,
    metric: impl Fn(&[String], &Grades) -> Option<f64>,
) -> f64 {
    let mut vals = Vec::new();
    for (q, rows) in run {
        let Some(g) = qrels.get(q) else { continue };
        let mut rows = rows.clone();
        tie_sort(&mut rows);
        let ranking: Vec<String> = rows.into_iter().map(|r| r.0).collect();
        if let Some(v) = metric(&ranking, g) {
            vals.push(v);
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Relative closeness; exact zeros must match exactly.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}
