//! The end-to-end cascade: retrieve (sparse, dense or both), fuse, mono
//! re-rank, duo re-rank, and optionally ensemble with other runs.

pub mod external;
mod fusion;
mod rerank;
mod scorer;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

use crate::corpus::{self, Document, Passage};
use crate::dense::{self, EmbeddingStore};
use crate::eval::{self, Gain, Run};
use crate::lexical::{Bm25Params, IndexError, InvertedIndex};
use crate::rank::{cmp_candidates, RankedList, ScoredCandidate, Stage};
use crate::Error;

pub use external::{external_score_batch, Endpoint, ExternalScorer, ScoreRequest, ScoreResponse};
pub use fusion::{ensemble_fuse, fuse_rrf, fuse_union, EnsembleMethod, DEFAULT_RRF_C};
pub use rerank::{
    duo_rerank, mono_rerank, order_by_preference, Aggregation, PairMatrix, StageFailure, TextSource,
};
pub use scorer::{
    builtin_overlap_score, builtin_pair_score, OverlapScorer, PairwiseScorer, PointwiseScorer,
    ScorerError, ScorerKind, ScorerSpec,
};

pub const DEFAULT_RETRIEVAL_DEPTH: usize = 1000;
pub const DEFAULT_MONO_DEPTH: usize = 100;
pub const DEFAULT_DUO_DEPTH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalMode {
    #[default]
    Sparse,
    Dense,
    Hybrid,
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "dense" => Ok(Self::Dense),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(format!("unknown retrieval mode {s:?} (expected sparse, dense or hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMethod {
    Rrf { c: f64 },
    Union,
}

impl Default for FusionMethod {
    fn default() -> Self {
        Self::Rrf { c: DEFAULT_RRF_C }
    }
}

/// Granularity of the ids written to the output run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputIds {
    /// Passage ids (`docid#window`).
    #[default]
    Passage,
    /// Parent document ids; each document takes its best passage score.
    Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoConfig {
    pub depth: usize,
    pub scorer: ScorerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuoConfig {
    pub depth: usize,
    pub aggregation: Aggregation,
    pub scorer: ScorerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub runs: Vec<PathBuf>,
    pub method: EnsembleMethod,
}

/// File inputs. Only [`run_pipeline`] and [`Engine::load`] read these.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub expansions: Option<PathBuf>,
    pub doc_embeddings: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tag: String,
    pub inputs: InputPaths,
    pub output: Option<PathBuf>,
    pub window: usize,
    pub stride: usize,
    pub prepend_meta: bool,
    pub bm25: Bm25Params,
    pub mode: RetrievalMode,
    pub k_sparse: usize,
    pub k_dense: usize,
    pub fusion: FusionMethod,
    /// Length of the fused list; defaults to `max(k_sparse, k_dense)`.
    pub fusion_depth: Option<usize>,
    pub mono: Option<MonoConfig>,
    pub duo: Option<DuoConfig>,
    pub ensemble: Option<EnsembleConfig>,
    pub output_ids: OutputIds,
    pub threads: Option<usize>,
    pub scorer_timeout: Duration,
    pub threshold: u32,
    pub gain: Gain,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tag: "rankcascade".into(),
            inputs: InputPaths::default(),
            output: None,
            window: corpus::DEFAULT_WINDOW,
            stride: corpus::DEFAULT_STRIDE,
            prepend_meta: true,
            bm25: Bm25Params::default(),
            mode: RetrievalMode::Sparse,
            k_sparse: DEFAULT_RETRIEVAL_DEPTH,
            k_dense: DEFAULT_RETRIEVAL_DEPTH,
            fusion: FusionMethod::default(),
            fusion_depth: None,
            mono: None,
            duo: None,
            ensemble: None,
            output_ids: OutputIds::Passage,
            threads: None,
            scorer_timeout: external::DEFAULT_TIMEOUT,
            threshold: eval::DEFAULT_THRESHOLD,
            gain: Gain::Linear,
        }
    }
}

impl PipelineConfig {
    /// Length of the first-stage list handed to mono.
    pub fn first_stage_depth(&self) -> usize {
        match self.mode {
            RetrievalMode::Sparse => self.k_sparse,
            RetrievalMode::Dense => self.k_dense,
            RetrievalMode::Hybrid => self
                .fusion_depth
                .unwrap_or_else(|| self.k_sparse.max(self.k_dense)),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.tag.is_empty() || self.tag.chars().any(char::is_whitespace) {
            return bad(format!("run tag {:?} must be non-empty without whitespace", self.tag));
        }
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return bad(format!(
                "need window >= 1 and 1 <= stride <= window (window={}, stride={})",
                self.window, self.stride
            ));
        }
        if self.k_sparse == 0 || self.k_dense == 0 || self.fusion_depth == Some(0) {
            return bad("retrieval depths must be at least 1".into());
        }
        if !(self.bm25.k1.is_finite() && self.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25.b)) {
            return bad(format!("invalid BM25 parameters k1={} b={}", self.bm25.k1, self.bm25.b));
        }
        if let FusionMethod::Rrf { c } = self.fusion {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("rrf constant must be positive, got {c}"));
            }
        }
        if let Some(EnsembleConfig {
            method: EnsembleMethod::Rrf { c },
            ..
        }) = &self.ensemble
        {
            if !(c.is_finite() && *c > 0.0) {
                return bad(format!("ensemble rrf constant must be positive, got {c}"));
            }
        }
        if self.threshold == 0 {
            return bad("relevance threshold must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        let retrieval_max = self.k_sparse.max(self.k_dense);
        if let Some(mono) = &self.mono {
            if mono.depth == 0 {
                return bad("mono depth must be at least 1".into());
            }
            if mono.depth > retrieval_max {
                return bad(format!(
                    "mono depth {} exceeds retrieval depth {retrieval_max}",
                    mono.depth
                ));
            }
            mono.scorer.validate().map_err(Error::Config)?;
        }
        if let Some(duo) = &self.duo {
            let Some(mono) = &self.mono else {
                return bad("duo stage requires a mono stage".into());
            };
            if duo.depth < 2 {
                return bad("duo depth must be at least 2".into());
            }
            if duo.depth > mono.depth {
                return bad(format!(
                    "duo depth {} exceeds mono depth {}",
                    duo.depth, mono.depth
                ));
            }
            duo.scorer.validate().map_err(Error::Config)?;
        }
        Ok(())
    }

    fn needs_embeddings(&self) -> bool {
        self.mode != RetrievalMode::Sparse
    }
}

/// Everything a query needs, loaded once.
pub struct Engine {
    cfg: PipelineConfig,
    passages: BTreeMap<String, Passage>,
    texts: BTreeMap<String, String>,
    index: InvertedIndex,
    doc_store: Option<EmbeddingStore>,
    query_store: Option<EmbeddingStore>,
    queries: Vec<(String, String)>,
    mono: Option<Box<dyn PointwiseScorer>>,
    duo: Option<Box<dyn PairwiseScorer>>,
    expansion_report: corpus::ExpansionReport,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("passages", &self.passages.len())
            .field("queries", &self.queries.len())
            .field("mode", &self.cfg.mode)
            .finish_non_exhaustive()
    }
}

/// In-memory inputs for [`Engine::from_data`].
#[derive(Debug, Clone, Default)]
pub struct EngineData {
    pub documents: Vec<Document>,
    pub expansions: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    pub doc_store: Option<EmbeddingStore>,
    pub query_store: Option<EmbeddingStore>,
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Builtin scorer, or a connection to an external one.
pub fn connect_pointwise(spec: &ScorerSpec, timeout: Duration) -> Result<Box<dyn PointwiseScorer>, Error> {
    Ok(match spec.kind {
        ScorerKind::BuiltinOverlap => Box::new(OverlapScorer),
        ScorerKind::External => Box::new(connect_external(spec, timeout, Stage::Mono)?),
    })
}

pub fn connect_pairwise(spec: &ScorerSpec, timeout: Duration) -> Result<Box<dyn PairwiseScorer>, Error> {
    Ok(match spec.kind {
        ScorerKind::BuiltinOverlap => Box::new(OverlapScorer),
        ScorerKind::External => Box::new(connect_external(spec, timeout, Stage::Duo)?),
    })
}

fn connect_external(spec: &ScorerSpec, timeout: Duration, stage: Stage) -> Result<ExternalScorer, Error> {
    let endpoint = spec.endpoint.as_deref().unwrap_or_default();
    let connect = || ExternalScorer::connect(&endpoint.parse()?, timeout);
    connect().map_err(|source| {
        Error::Stage(StageFailure {
            stage,
            attempted: 0,
            source,
        })
    })
}

impl Engine {
    /// Read every input named in `cfg.inputs` and build the engine.
    pub fn load(cfg: &PipelineConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let inputs = &cfg.inputs;
        let documents = corpus::read_corpus(open(&inputs.corpus)?)?;
        let queries = corpus::read_pairs(open(&inputs.queries)?)?;
        let expansions = match &inputs.expansions {
            Some(p) => corpus::read_pairs(open(p)?)?,
            None => Vec::new(),
        };
        let (doc_store, query_store) = if cfg.needs_embeddings() {
            let need = |p: &Option<PathBuf>, what: &str| {
                p.clone()
                    .ok_or_else(|| Error::Config(format!("{:?} retrieval needs {what}", cfg.mode)))
            };
            let docs = need(&inputs.doc_embeddings, "document embeddings")?;
            let qs = need(&inputs.query_embeddings, "query embeddings")?;
            (
                Some(dense::load_embedding_store(docs)?),
                Some(dense::load_embedding_store(qs)?),
            )
        } else {
            (None, None)
        };
        Self::from_data(
            cfg,
            EngineData {
                documents,
                expansions,
                queries,
                doc_store,
                query_store,
            },
        )
    }

    /// Build from in-memory inputs; `cfg.inputs` is ignored.
    pub fn from_data(cfg: &PipelineConfig, data: EngineData) -> Result<Self, Error> {
        cfg.validate()?;
        let mut documents = data.documents;
        documents.sort_by(|a, b| a.docid.cmp(&b.docid));
        if let Some(w) = documents.windows(2).find(|w| w[0].docid == w[1].docid) {
            return Err(corpus::CorpusError::DuplicateDocId(w[0].docid.clone()).into());
        }
        let mut passages = corpus::segment_corpus(&documents, cfg.window, cfg.stride)?;
        let expansion_report = corpus::attach_expansion_file(&mut passages, &data.expansions);

        let by_id: HashMap<&str, &Document> = documents.iter().map(|d| (d.docid.as_str(), d)).collect();
        let records: Vec<(String, String)> = passages
            .par_iter()
            .map(|p| {
                let parent = by_id[p.parent.as_str()];
                (p.passage_id.clone(), corpus::render_index_text(p, parent, cfg.prepend_meta))
            })
            .collect();
        let index = InvertedIndex::build(&records, cfg.bm25)?;

        if cfg.needs_embeddings() {
            let (Some(ds), Some(qs)) = (&data.doc_store, &data.query_store) else {
                return Err(Error::Config(format!("{:?} retrieval needs embeddings", cfg.mode)));
            };
            if ds.dim() != qs.dim() {
                return Err(dense::DenseError::DimMismatch {
                    expected: ds.dim(),
                    found: qs.dim(),
                }
                .into());
            }
        }

        let mut queries = data.queries;
        queries.sort();
        if let Some(w) = queries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!("duplicate query id {:?}", w[0].0)));
        }

        let mono = cfg
            .mono
            .as_ref()
            .map(|m| connect_pointwise(&m.scorer, cfg.scorer_timeout))
            .transpose()?;
        let duo = cfg
            .duo
            .as_ref()
            .map(|d| connect_pairwise(&d.scorer, cfg.scorer_timeout))
            .transpose()?;

        let texts = passages
            .iter()
            .map(|p| (p.passage_id.clone(), p.text.clone()))
            .collect();
        let passages = passages
            .into_iter()
            .map(|p| (p.passage_id.clone(), p))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            passages,
            texts,
            index,
            doc_store: data.doc_store,
            query_store: data.query_store,
            queries,
            mono,
            duo,
            expansion_report,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.passages.values()
    }

    pub fn queries(&self) -> &[(String, String)] {
        &self.queries
    }

    pub fn expansion_report(&self) -> corpus::ExpansionReport {
        self.expansion_report
    }

    fn sparse(&self, text: &str) -> Result<RankedList, Error> {
        match self.index.search(text, self.cfg.k_sparse) {
            Err(IndexError::EmptyQuery) => Ok(Vec::new()),
            other => Ok(other?),
        }
    }

    fn dense(&self, qid: &str) -> Result<RankedList, Error> {
        let (Some(docs), Some(qs)) = (&self.doc_store, &self.query_store) else {
            return Err(Error::Config("dense retrieval without embeddings".into()));
        };
        let q = qs
            .get(qid)
            .ok_or_else(|| Error::Data(format!("no query embedding for {qid:?}")))?;
        Ok(docs.search(q, self.cfg.k_dense)?)
    }

    /// First-stage candidates for one query.
    pub fn retrieve(&self, qid: &str, text: &str) -> Result<RankedList, Error> {
        Ok(match self.cfg.mode {
            RetrievalMode::Sparse => self.sparse(text)?,
            RetrievalMode::Dense => self.dense(qid)?,
            RetrievalMode::Hybrid => {
                let lists = [self.sparse(text)?, self.dense(qid)?];
                let depth = self.cfg.first_stage_depth();
                match self.cfg.fusion {
                    FusionMethod::Rrf { c } => fuse_rrf(&lists, c, depth),
                    FusionMethod::Union => fuse_union(&lists, depth),
                }
            }
        })
    }

    /// Full cascade for one query, at passage granularity.
    pub fn rank_query(&self, qid: &str, text: &str) -> Result<RankedList, Error> {
        let mut list = self.retrieve(qid, text)?;
        if let (Some(cfg), Some(scorer)) = (&self.cfg.mono, &self.mono) {
            list = mono_rerank(text, &list, &self.texts, scorer.as_ref(), cfg.depth)?;
        }
        if let (Some(cfg), Some(scorer)) = (&self.cfg.duo, &self.duo) {
            list = duo_rerank(text, &list, &self.texts, scorer.as_ref(), cfg.depth, cfg.aggregation)?;
        }
        if self.cfg.output_ids == OutputIds::Document {
            list = self.collapse_to_documents(list);
        }
        Ok(list)
    }

    /// Keep each document's best-scoring passage, renamed to the docid.
    fn collapse_to_documents(&self, list: RankedList) -> RankedList {
        let mut best: BTreeMap<&str, ScoredCandidate> = BTreeMap::new();
        for c in list {
            let parent = self.passages[&c.item_id].parent.as_str();
            match best.get(parent) {
                Some(prev) if prev.score >= c.score => {}
                _ => {
                    best.insert(parent, ScoredCandidate::new(parent, c.score, c.stage));
                }
            }
        }
        let mut out: RankedList = best.into_values().collect();
        out.sort_by(cmp_candidates);
        out
    }

    /// Rank every query. Queries run in parallel on the current rayon pool;
    /// the result does not depend on the pool size.
    pub fn run(&self) -> Result<Run, Error> {
        let ranked: Vec<(String, RankedList)> = self
            .queries
            .par_iter()
            .map(|(qid, text)| Ok((qid.clone(), self.rank_query(qid, text)?)))
            .collect::<Result<_, Error>>()?;
        let mut run = Run::new(self.cfg.tag.clone());
        for (qid, list) in ranked {
            run.insert_ranked(qid, &list)?;
        }
        if let Some(ens) = &self.cfg.ensemble {
            let mut runs = vec![run];
            for path in &ens.runs {
                runs.push(eval::parse_run(open(path)?)?);
            }
            run = ensemble_fuse(&runs, ens.method)?;
            run.tag = self.cfg.tag.clone();
        }
        Ok(run)
    }
}

/// Load inputs and run the cascade on a pool of `cfg.threads` workers.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Run, Error> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| Engine::load(cfg)?.run())
}
