//! TOML pipeline configuration.
//!
//! Only `corpus.path` and `queries.path` are required; everything else has
//! a default. Relative paths are resolved against the config file's
//! directory. Unknown keys are rejected.
//!
//! ```toml
//! tag = "hybrid_mono_duo"
//! threads = 4                # optional
//! output = "run.txt"         # optional
//! output_ids = "passage"     # or "document" (best passage per document)
//! scorer_timeout_secs = 30
//!
//! [corpus]
//! path = "corpus.tsv"
//! expansions = "expansions.tsv"
//! window = 10
//! stride = 5
//! prepend_meta = true
//!
//! [queries]
//! path = "queries.tsv"
//! embeddings = "queries.emb"
//!
//! [bm25]
//! k1 = 0.9
//! b = 0.4
//!
//! [retrieval]
//! mode = "hybrid"            # sparse | dense | hybrid
//! k_sparse = 1000
//! k_dense = 1000
//! embeddings = "passages.emb"
//!
//! [fusion]
//! method = "rrf"             # rrf | union
//! c = 60
//! depth = 1000
//!
//! [mono]
//! depth = 100
//! scorer = "builtin"         # builtin | external
//! endpoint = "tcp://127.0.0.1:7000"
//!
//! [duo]
//! depth = 50
//! aggregation = "sym-sum"    # sum | sym-sum
//! scorer = "builtin"
//!
//! [ensemble]
//! runs = ["seed2.run"]
//! method = "mean"            # mean | rrf
//! c = 60
//!
//! [eval]
//! qrels = "qrels.txt"
//! threshold = 2
//! gain = "linear"            # linear | exponential
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::eval::Gain;
use crate::lexical::Bm25Params;
use crate::pipeline::{
    Aggregation, DuoConfig, EnsembleConfig, EnsembleMethod, FusionMethod, InputPaths, MonoConfig,
    OutputIds, PipelineConfig, ScorerKind, ScorerSpec, DEFAULT_DUO_DEPTH, DEFAULT_MONO_DEPTH,
    DEFAULT_RRF_C,
};
use crate::Error;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    tag: Option<String>,
    threads: Option<usize>,
    output: Option<PathBuf>,
    output_ids: Option<String>,
    scorer_timeout_secs: Option<f64>,
    corpus: Option<RawCorpus>,
    queries: Option<RawQueries>,
    bm25: Option<RawBm25>,
    retrieval: Option<RawRetrieval>,
    fusion: Option<RawFusion>,
    mono: Option<RawStage>,
    duo: Option<RawStage>,
    ensemble: Option<RawEnsemble>,
    eval: Option<RawEval>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    path: Option<PathBuf>,
    expansions: Option<PathBuf>,
    window: Option<usize>,
    stride: Option<usize>,
    prepend_meta: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQueries {
    path: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBm25 {
    k1: Option<f64>,
    b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetrieval {
    mode: Option<String>,
    k_sparse: Option<usize>,
    k_dense: Option<usize>,
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFusion {
    method: Option<String>,
    c: Option<f64>,
    depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    depth: Option<usize>,
    scorer: Option<String>,
    endpoint: Option<String>,
    aggregation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    runs: Vec<PathBuf>,
    method: Option<String>,
    c: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    qrels: Option<PathBuf>,
    threshold: Option<u32>,
    gain: Option<String>,
}

/// Read and validate a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, base)
}

/// Parse config text; relative paths are joined onto `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<PipelineConfig, Error> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(describe(&e)))?;
    let cfg = build(raw, base)?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe(e: &toml::de::Error) -> String {
    let msg = e.message();
    match msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split_once('`'))
    {
        Some((key, _)) => format!("unknown key `{key}`"),
        None => msg.to_string(),
    }
}

fn scorer_spec(raw: &RawStage, stage: &str) -> Result<ScorerSpec, Error> {
    let kind = match raw.scorer.as_deref().unwrap_or("builtin") {
        "builtin" => ScorerKind::BuiltinOverlap,
        "external" => ScorerKind::External,
        other => {
            return Err(Error::Config(format!(
                "{stage}.scorer: unknown scorer {other:?} (expected builtin or external)"
            )))
        }
    };
    Ok(ScorerSpec {
        kind,
        endpoint: raw.endpoint.clone(),
        tag: raw.scorer.clone().unwrap_or_else(|| "builtin".into()),
    })
}

fn build(raw: RawConfig, base: &Path) -> Result<PipelineConfig, Error> {
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let mut cfg = PipelineConfig::default();

    let corpus = raw.corpus.unwrap_or_default();
    let queries = raw.queries.unwrap_or_default();
    let retrieval = raw.retrieval.unwrap_or_default();
    let eval = raw.eval.unwrap_or_default();
    let corpus_path = corpus
        .path
        .ok_or_else(|| Error::Config("missing required path corpus.path".into()))?;
    let queries_path = queries
        .path
        .ok_or_else(|| Error::Config("missing required path queries.path".into()))?;
    cfg.inputs = InputPaths {
        corpus: resolve(corpus_path),
        queries: resolve(queries_path),
        expansions: corpus.expansions.map(resolve),
        doc_embeddings: retrieval.embeddings.map(resolve),
        query_embeddings: queries.embeddings.map(resolve),
        qrels: eval.qrels.map(resolve),
    };

    if let Some(tag) = raw.tag {
        cfg.tag = tag;
    }
    cfg.threads = raw.threads;
    cfg.output = raw.output.map(resolve);
    cfg.output_ids = match raw.output_ids.as_deref() {
        None | Some("passage") => OutputIds::Passage,
        Some("document") => OutputIds::Document,
        Some(other) => {
            return Err(Error::Config(format!(
                "output_ids: expected passage or document, got {other:?}"
            )))
        }
    };
    if let Some(secs) = raw.scorer_timeout_secs {
        cfg.scorer_timeout = Duration::try_from_secs_f64(secs)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| Error::Config(format!("scorer_timeout_secs: invalid value {secs}")))?;
    }

    cfg.window = corpus.window.unwrap_or(cfg.window);
    cfg.stride = corpus.stride.unwrap_or(cfg.stride);
    cfg.prepend_meta = corpus.prepend_meta.unwrap_or(cfg.prepend_meta);

    let bm25 = raw.bm25.unwrap_or_default();
    cfg.bm25 = Bm25Params {
        k1: bm25.k1.unwrap_or(cfg.bm25.k1),
        b: bm25.b.unwrap_or(cfg.bm25.b),
    };

    if let Some(mode) = retrieval.mode {
        cfg.mode = mode.parse().map_err(Error::Config)?;
    }
    cfg.k_sparse = retrieval.k_sparse.unwrap_or(cfg.k_sparse);
    cfg.k_dense = retrieval.k_dense.unwrap_or(cfg.k_dense);

    let fusion = raw.fusion.unwrap_or_default();
    cfg.fusion = match fusion.method.as_deref().unwrap_or("rrf") {
        "rrf" => FusionMethod::Rrf {
            c: fusion.c.unwrap_or(DEFAULT_RRF_C),
        },
        "union" => FusionMethod::Union,
        other => return Err(Error::Config(format!("fusion.method: unknown method {other:?}"))),
    };
    cfg.fusion_depth = fusion.depth;

    if let Some(mono) = raw.mono {
        if mono.aggregation.is_some() {
            return Err(Error::Config("unknown key `aggregation` in [mono]".into()));
        }
        cfg.mono = Some(MonoConfig {
            depth: mono.depth.unwrap_or(DEFAULT_MONO_DEPTH),
            scorer: scorer_spec(&mono, "mono")?,
        });
    }
    if let Some(duo) = raw.duo {
        cfg.duo = Some(DuoConfig {
            depth: duo.depth.unwrap_or(DEFAULT_DUO_DEPTH),
            aggregation: match &duo.aggregation {
                Some(a) => a.parse().map_err(Error::Config)?,
                None => Aggregation::default(),
            },
            scorer: scorer_spec(&duo, "duo")?,
        });
    }
    if let Some(ens) = raw.ensemble {
        let method = match ens.method.as_deref().unwrap_or("mean") {
            "mean" => EnsembleMethod::MeanNormalized,
            "rrf" => EnsembleMethod::Rrf {
                c: ens.c.unwrap_or(DEFAULT_RRF_C),
            },
            other => return Err(Error::Config(format!("ensemble.method: unknown method {other:?}"))),
        };
        cfg.ensemble = Some(EnsembleConfig {
            runs: ens.runs.into_iter().map(resolve).collect(),
            method,
        });
    }

    cfg.threshold = eval.threshold.unwrap_or(cfg.threshold);
    cfg.gain = match eval.gain.as_deref() {
        None | Some("linear") => Gain::Linear,
        Some("exponential") => Gain::Exponential,
        Some(other) => return Err(Error::Config(format!("eval.gain: unknown gain {other:?}"))),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RetrievalMode;

    fn parse(text: &str) -> Result<PipelineConfig, Error> {
        parse_config_str(text, Path::new("/data"))
    }

    const MINIMAL: &str = "[corpus]\npath = \"c.tsv\"\n[queries]\npath = \"q.tsv\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.inputs.corpus, Path::new("/data/c.tsv"));
        assert_eq!(cfg.inputs.queries, Path::new("/data/q.tsv"));
        assert_eq!((cfg.window, cfg.stride), (10, 5));
        assert_eq!((cfg.bm25.k1, cfg.bm25.b), (0.9, 0.4));
        assert_eq!(cfg.fusion, FusionMethod::Rrf { c: 60.0 });
        assert_eq!(cfg.threshold, 2);
        assert_eq!(cfg.mode, RetrievalMode::Sparse);
        assert!(cfg.mono.is_none() && cfg.duo.is_none());
    }

    #[test]
    fn duo_deeper_than_mono_is_rejected() {
        let text = format!("{MINIMAL}[mono]\ndepth = 50\n[duo]\ndepth = 100\n");
        assert!(matches!(parse(&text), Err(Error::Config(m)) if m.contains("duo depth 100")));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = "[corpus]\npath = \"c.tsv\"\nwindw = 3\n[queries]\npath = \"q.tsv\"\n";
        match parse(text) {
            Err(Error::Config(m)) => assert!(m.contains("windw"), "{m}"),
            other => panic!("expected config error, got {other:?}"),
        }
        assert!(matches!(parse(&format!("bogus = 1\n{MINIMAL}")), Err(Error::Config(m)) if m.contains("bogus")));
    }

    #[test]
    fn missing_paths() {
        assert!(matches!(parse("[queries]\npath = \"q\"\n"), Err(Error::Config(m)) if m.contains("corpus.path")));
        assert!(matches!(parse("[corpus]\npath = \"c\"\n"), Err(Error::Config(m)) if m.contains("queries.path")));
    }

    #[test]
    fn full_config() {
        let text = r#"
            tag = "f3"
            threads = 8
            output_ids = "document"
            [corpus]
            path = "/abs/c.tsv"
            expansions = "e.tsv"
            window = 6
            stride = 3
            [queries]
            path = "q.tsv"
            embeddings = "q.emb"
            [retrieval]
            mode = "hybrid"
            k_sparse = 200
            k_dense = 100
            embeddings = "p.emb"
            [fusion]
            method = "union"
            [mono]
            depth = 50
            scorer = "external"
            endpoint = "tcp://127.0.0.1:7000"
            [duo]
            depth = 10
            aggregation = "sum"
            [ensemble]
            runs = ["a.run"]
            method = "rrf"
            c = 10
            [eval]
            gain = "exponential"
            threshold = 1
        "#;
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.inputs.corpus, Path::new("/abs/c.tsv"));
        assert_eq!(cfg.inputs.doc_embeddings.as_deref(), Some(Path::new("/data/p.emb")));
        assert_eq!(cfg.mode, RetrievalMode::Hybrid);
        assert_eq!(cfg.fusion, FusionMethod::Union);
        assert_eq!(cfg.first_stage_depth(), 200);
        assert_eq!(cfg.mono.as_ref().unwrap().scorer.kind, ScorerKind::External);
        assert_eq!(cfg.duo.as_ref().unwrap().aggregation, Aggregation::Sum);
        assert_eq!(cfg.ensemble.as_ref().unwrap().method, EnsembleMethod::Rrf { c: 10.0 });
        assert_eq!(cfg.output_ids, OutputIds::Document);
        assert_eq!(cfg.gain, Gain::Exponential);
    }

    #[test]
    fn external_without_endpoint() {
        let text = format!("{MINIMAL}[mono]\ndepth = 5\nscorer = \"external\"\n");
        assert!(matches!(parse(&text), Err(Error::Config(_))));
    }
}
