//! Per-run metric reports in the `tag MAP@100 NDCG@5 NDCG@10 R@100` layout.

use std::fmt::Write as _;

use super::metrics::{map_at_k, ndcg_at_k, recall_at_k, Gain, MetricValues, DEFAULT_THRESHOLD};
use super::{EvalError, Qrels, Run};

pub const METRIC_NAMES: [&str; 4] = ["MAP@100", "NDCG@5", "NDCG@10", "R@100"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub threshold: u32,
    pub gain: Gain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            gain: Gain::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tag: String,
    pub map100: MetricValues,
    pub ndcg5: MetricValues,
    pub ndcg10: MetricValues,
    pub recall100: MetricValues,
    pub warnings: Vec<String>,
}

pub fn evaluate_run(run: &Run, qrels: &Qrels, opts: EvalOptions) -> Result<MetricsReport, EvalError> {
    let map100 = map_at_k(run, qrels, 100, opts.threshold)?;
    let ndcg5 = ndcg_at_k(run, qrels, 5, opts.gain)?;
    let ndcg10 = ndcg_at_k(run, qrels, 10, opts.gain)?;
    let recall100 = recall_at_k(run, qrels, 100, opts.threshold)?;

    let mut warnings = Vec::new();
    let common = run.query_ids().filter(|q| qrels.query(q).is_some()).count();
    if common == 0 {
        warnings.push("run and qrels share no queries; all means are 0".to_string());
    }
    let d = &ndcg10.diagnostics;
    if !d.missing_from_qrels.is_empty() {
        warnings.push(format!("{} run queries have no judgments", d.missing_from_qrels.len()));
    }
    if !d.missing_from_run.is_empty() {
        warnings.push(format!("{} judged queries missing from run", d.missing_from_run.len()));
    }
    Ok(MetricsReport {
        tag: run.tag.clone(),
        map100,
        ndcg5,
        ndcg10,
        recall100,
        warnings,
    })
}

impl MetricsReport {
    /// Means in [`METRIC_NAMES`] order.
    pub fn means(&self) -> [f64; 4] {
        [
            self.map100.mean,
            self.ndcg5.mean,
            self.ndcg10.mean,
            self.recall100.mean,
        ]
    }

    /// `tag v v v v` with 4 decimals.
    pub fn row(&self) -> String {
        format_row(&self.tag, self.means())
    }

    /// Header plus row, columns aligned.
    pub fn table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }

    /// One `tag metric value` line per metric.
    pub fn lines(&self) -> String {
        METRIC_NAMES
            .iter()
            .zip(self.means())
            .map(|(name, v)| format!("{} {} {:.4}\n", self.tag, name, v))
            .collect()
    }

    /// `other - self` for every metric.
    pub fn compare(&self, other: &MetricsReport) -> ReportDelta {
        let a = self.means();
        let b = other.means();
        ReportDelta {
            base: self.tag.clone(),
            other: other.tag.clone(),
            deltas: std::array::from_fn(|i| b[i] - a[i]),
        }
    }
}

/// Header plus one row per report, columns aligned.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.tag.len()).max().unwrap_or(0).max(3);
    let mut out = format!("{:<width$}", "RUN");
    for name in METRIC_NAMES {
        let _ = write!(out, " {name:>7}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<width$}", r.tag);
        for v in r.means() {
            let _ = write!(out, " {v:>7.4}");
        }
        out.push('\n');
    }
    out
}

pub fn format_row(tag: &str, values: [f64; 4]) -> String {
    let mut out = tag.to_string();
    for v in values {
        let _ = write!(out, " {v:.4}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDelta {
    pub base: String,
    pub other: String,
    /// In [`METRIC_NAMES`] order.
    pub deltas: [f64; 4],
}

impl ReportDelta {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, d) in METRIC_NAMES.iter().zip(self.deltas) {
            let _ = writeln!(out, "{} vs {} {} {:+.4}", self.other, self.base, name, d);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with(tag: &str, means: [f64; 4]) -> MetricsReport {
        let mv = |m| MetricValues {
            mean: m,
            ..Default::default()
        };
        MetricsReport {
            tag: tag.into(),
            map100: mv(means[0]),
            ndcg5: mv(means[1]),
            ndcg10: mv(means[2]),
            recall100: mv(means[3]),
            warnings: vec![],
        }
    }

    #[test]
    fn renders_table_row() {
        let r = report_with("pash_r1", [0.2362, 0.7190, 0.6951, 0.3261]);
        assert_eq!(r.row(), "pash_r1 0.2362 0.7190 0.6951 0.3261");
        assert_eq!(
            r.lines(),
            "pash_r1 MAP@100 0.2362\npash_r1 NDCG@5 0.7190\npash_r1 NDCG@10 0.6951\npash_r1 R@100 0.3261\n"
        );
        assert_eq!(
            r.table(),
            "RUN     MAP@100  NDCG@5 NDCG@10   R@100\npash_r1  0.2362  0.7190  0.6951  0.3261\n"
        );
    }

    #[test]
    fn compare_reports_deltas() {
        let a = report_with("a", [0.3, 0.70, 0.70, 0.5]);
        let b = report_with("b", [0.3, 0.75, 0.65, 0.5]);
        let d = a.compare(&b);
        assert!(d.deltas[1] > 0.0 && d.deltas[2] < 0.0);
        assert!(d.render().contains("b vs a NDCG@5 +0.0500"));
        assert!(d.render().contains("b vs a NDCG@10 -0.0500"));
    }

    #[test]
    fn disjoint_queries_warn_without_nan() {
        let mut run = Run::new("t");
        run.insert("1", vec![("a".into(), 1.0)]).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("2", "a", 3).unwrap();
        let r = evaluate_run(&run, &qrels, EvalOptions::default()).unwrap();
        assert!(r.means().iter().all(|v| *v == 0.0));
        assert!(r.warnings.iter().any(|w| w.contains("share no queries")));
    }
}
