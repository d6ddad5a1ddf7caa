use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use rankcascade::corpus::{self, Document, Passage};
use rankcascade::dense::{self, EmbeddingStore};
use rankcascade::eval::{self, EvalOptions, Gain, Qrels, Run};
use rankcascade::lexical::{self, Bm25Params, InvertedIndex};
use rankcascade::pipeline::{
    self, Aggregation, EnsembleMethod, ScorerKind, ScorerSpec, DEFAULT_DUO_DEPTH, DEFAULT_MONO_DEPTH,
    DEFAULT_RETRIEVAL_DEPTH, DEFAULT_RRF_C,
};
use rankcascade::synthetic::{self, SyntheticSpec};
use rankcascade::{Error, ScoredCandidate, Stage};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "rankcascade", version, about = "Multi-stage retrieval and ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Segmenting {
    /// Corpus file: docid<TAB>url<TAB>title<TAB>body
    #[arg(long, visible_alias = "in")]
    corpus: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = corpus::DEFAULT_STRIDE)]
    stride: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Split documents into sliding-window passages
    Segment {
        #[command(flatten)]
        seg: Segmenting,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the text each passage is indexed with, expansions included
    Expand {
        #[command(flatten)]
        seg: Segmenting,
        /// passage_id<TAB>expansion query, one per line
        #[arg(long)]
        expansions: PathBuf,
        /// Do not prepend url and title
        #[arg(long)]
        no_meta: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a BM25 index over (expanded) passages
    Index {
        #[command(flatten)]
        seg: Segmenting,
        #[arg(long)]
        expansions: Option<PathBuf>,
        #[arg(long)]
        no_meta: bool,
        #[arg(long, default_value_t = lexical::DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = lexical::DEFAULT_B)]
        b: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an embedding file and print its shape; optionally convert it
    Embeddings {
        file: PathBuf,
        /// Write a copy in the other format
        #[arg(long)]
        convert: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EmbFormat::Binary)]
        format: EmbFormat,
    },
    /// First-stage retrieval
    Search {
        /// query_id<TAB>text, one per line
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Sparse)]
        mode: Mode,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        doc_embeddings: Option<PathBuf>,
        #[arg(long)]
        query_embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RETRIEVAL_DEPTH)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Fusion::Rrf)]
        fusion: Fusion,
        #[arg(long, default_value_t = DEFAULT_RRF_C)]
        c: f64,
        #[arg(long, default_value = "search")]
        tag: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-rank a run with a point-wise (mono) or pair-wise (duo) scorer
    Rerank {
        #[arg(long, value_enum)]
        stage: RerankStage,
        #[arg(long, visible_alias = "in")]
        run: PathBuf,
        /// Passage file written by `segment`
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Candidates re-scored per query (default 100 for mono, 50 for duo)
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value = "sym-sum")]
        aggregation: String,
        #[arg(long, value_enum, default_value_t = ScorerChoice::Builtin)]
        scorer: ScorerChoice,
        /// tcp://host:port, host:port or stdio:command args
        #[arg(long)]
        endpoint: Option<String>,
        /// Seconds to wait for each external batch
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble several runs
    Fuse {
        #[arg(long, value_enum, default_value_t = FuseMethod::Mean)]
        method: FuseMethod,
        #[arg(long, default_value_t = DEFAULT_RRF_C)]
        c: f64,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input run; may repeat, and positional runs follow it
        #[arg(long = "in")]
        inputs: Vec<PathBuf>,
        #[arg(required_unless_present = "inputs")]
        runs: Vec<PathBuf>,
    },
    /// Score runs against graded judgments
    Eval {
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
        /// Also print each run's deltas against the first
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD)]
        threshold: u32,
        #[arg(long, value_enum, default_value_t = GainChoice::Linear)]
        gain: GainChoice,
        /// Run to score; may repeat, and positional runs follow it
        #[arg(long = "run")]
        inputs: Vec<PathBuf>,
        #[arg(required_unless_present = "inputs")]
        runs: Vec<PathBuf>,
    },
    /// Run the configured cascade end to end
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Write a synthetic collection and a ready-to-run config
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = SyntheticSpec::default().passages)]
        passages: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().queries)]
        queries: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().mismatch)]
        mismatch: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().dim)]
        dim: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sparse,
    Dense,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Rrf,
    Union,
}

#[derive(Clone, Copy, ValueEnum)]
enum RerankStage {
    Mono,
    Duo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerChoice {
    Builtin,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum FuseMethod {
    Mean,
    Rrf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Lines,
}

#[derive(Clone, Copy, ValueEnum)]
enum GainChoice {
    Linear,
    Exponential,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbFormat {
    Binary,
    Text,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// Write to `path`, or stdout when absent.
fn write_out(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_err(p))?);
            f(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w).and_then(|_| w.flush()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let mut docs = corpus::read_corpus(open(path)?)?;
    docs.sort_by(|a, b| a.docid.cmp(&b.docid));
    Ok(docs)
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(corpus::read_pairs(open(path)?)?)
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    Ok(dense::load_embedding_store(path)?)
}

fn read_run(path: &Path) -> Result<Run> {
    Ok(eval::parse_run(open(path)?)?)
}

fn segment(seg: &Segmenting) -> Result<(Vec<Document>, Vec<Passage>)> {
    let docs = read_documents(&seg.corpus)?;
    let passages = corpus::segment_corpus(&docs, seg.window, seg.stride)?;
    Ok((docs, passages))
}

/// `(passage_id, index text)` for every passage, expansions attached.
fn index_records(
    seg: &Segmenting,
    expansions: Option<&Path>,
    prepend_meta: bool,
) -> Result<Vec<(String, String)>> {
    let (docs, mut passages) = segment(seg)?;
    if let Some(p) = expansions {
        let report = corpus::attach_expansion_file(&mut passages, &read_pairs(p)?);
        eprintln!(
            "attached {} expansion queries; {} referenced unknown passages",
            report.attached, report.unknown
        );
    }
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.docid.as_str(), d)).collect();
    Ok(passages
        .iter()
        .map(|p| {
            (
                p.passage_id.clone(),
                corpus::render_index_text(p, by_id[p.parent.as_str()], prepend_meta),
            )
        })
        .collect())
}

fn run_lists(tag: &str, lists: Vec<(String, Vec<ScoredCandidate>)>) -> Result<Run> {
    let mut run = Run::new(tag);
    for (qid, list) in lists {
        run.insert_ranked(qid, &list)?;
    }
    Ok(run)
}

fn write_run(run: &Run, out: Option<&Path>) -> Result<()> {
    write_out(out, |w| eval::write_run(run, w))
}

fn check_tag(tag: &str) -> Result<()> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!("run tag {tag:?} must be non-empty without whitespace")));
    }
    Ok(())
}

fn search(
    queries: &Path,
    mode: Mode,
    index: Option<&Path>,
    stores: (Option<&Path>, Option<&Path>),
    k: usize,
    fusion: Fusion,
    c: f64,
) -> Result<Vec<(String, Vec<ScoredCandidate>)>> {
    if k == 0 {
        return Err(Error::Config("--k must be at least 1".into()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Config(format!("rrf constant must be positive, got {c}")));
    }
    let queries = read_pairs(queries)?;
    let index: Option<InvertedIndex> = match (mode, index) {
        (Mode::Dense, _) => None,
        (_, Some(p)) => Some(lexical::read_index(open(p)?)?),
        (_, None) => return Err(Error::Config("sparse retrieval needs --index".into())),
    };
    let stores = match (mode, stores) {
        (Mode::Sparse, _) => None,
        (_, (Some(d), Some(q))) => Some((load_store(d)?, load_store(q)?)),
        _ => {
            return Err(Error::Config(
                "dense retrieval needs --doc-embeddings and --query-embeddings".into(),
            ))
        }
    };
    let mut out = Vec::with_capacity(queries.len());
    for (qid, text) in queries {
        let sparse = match &index {
            Some(idx) => match idx.search(&text, k) {
                Err(lexical::IndexError::EmptyQuery) => Some(Vec::new()),
                r => Some(r?),
            },
            None => None,
        };
        let dense = match &stores {
            Some((docs, qs)) => {
                let q = qs
                    .get(&qid)
                    .ok_or_else(|| Error::Data(format!("no query embedding for {qid:?}")))?;
                Some(docs.search(q, k)?)
            }
            None => None,
        };
        let list = match (sparse, dense) {
            (Some(s), Some(d)) => match fusion {
                Fusion::Rrf => pipeline::fuse_rrf(&[s, d], c, k),
                Fusion::Union => pipeline::fuse_union(&[s, d], k),
            },
            (Some(l), None) | (None, Some(l)) => l,
            (None, None) => unreachable!("mode selects at least one retriever"),
        };
        out.push((qid, list));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rerank(
    stage: RerankStage,
    run: &Run,
    passages: &Path,
    queries: &Path,
    depth: Option<usize>,
    aggregation: &str,
    scorer: ScorerSpec,
    timeout: Duration,
) -> Result<Vec<(String, Vec<ScoredCandidate>)>> {
    scorer.validate().map_err(Error::Config)?;
    let aggregation: Aggregation = aggregation.parse().map_err(Error::Config)?;
    let texts: BTreeMap<String, String> = corpus::read_passages(open(passages)?)?
        .into_iter()
        .map(|p| (p.passage_id, p.text))
        .collect();
    let queries: BTreeMap<String, String> = read_pairs(queries)?.into_iter().collect();
    let mono = match stage {
        RerankStage::Mono => Some(pipeline::connect_pointwise(&scorer, timeout)?),
        RerankStage::Duo => None,
    };
    let duo = match stage {
        RerankStage::Duo => Some(pipeline::connect_pairwise(&scorer, timeout)?),
        RerankStage::Mono => None,
    };
    let mut out = Vec::new();
    for (qid, rows) in run.iter() {
        let text = queries
            .get(qid)
            .ok_or_else(|| Error::Data(format!("run query {qid:?} is not in the queries file")))?;
        let cands: Vec<ScoredCandidate> = rows
            .iter()
            .map(|r| ScoredCandidate::new(r.item_id.clone(), r.score, Stage::Fused))
            .collect();
        let list = match (&mono, &duo) {
            (Some(s), _) => {
                pipeline::mono_rerank(text, &cands, &texts, s.as_ref(), depth.unwrap_or(DEFAULT_MONO_DEPTH))?
            }
            (_, Some(s)) => pipeline::duo_rerank(
                text,
                &cands,
                &texts,
                s.as_ref(),
                depth.unwrap_or(DEFAULT_DUO_DEPTH),
                aggregation,
            )?,
            _ => unreachable!("one scorer is connected"),
        };
        out.push((qid.to_string(), list));
    }
    Ok(out)
}

fn evaluate(
    qrels: &Path,
    runs: &[PathBuf],
    format: ReportFormat,
    compare: bool,
    opts: EvalOptions,
) -> Result<()> {
    let qrels: Qrels = eval::parse_qrels(open(qrels)?)?;
    let mut reports = Vec::with_capacity(runs.len());
    for path in runs {
        let report = eval::evaluate_run(&read_run(path)?, &qrels, opts)?;
        for w in &report.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        reports.push(report);
    }
    let mut text = match format {
        ReportFormat::Table => eval::render_table(&reports),
        ReportFormat::Lines => reports.iter().map(|r| r.lines()).collect(),
    };
    if compare {
        if reports.len() < 2 {
            return Err(Error::Config("--compare needs at least two runs".into()));
        }
        for other in &reports[1..] {
            text.push_str(&reports[0].compare(other).render());
        }
    }
    write_out(None, |w| w.write_all(text.as_bytes()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment { seg, out } => {
            let (_, passages) = segment(&seg)?;
            write_out(out.as_deref(), |w| corpus::write_passages(&passages, w))
        }
        Command::Expand {
            seg,
            expansions,
            no_meta,
            out,
        } => {
            let records = index_records(&seg, Some(&expansions), !no_meta)?;
            write_out(out.as_deref(), |w| corpus::write_pairs(&records, w))
        }
        Command::Index {
            seg,
            expansions,
            no_meta,
            k1,
            b,
            out,
        } => {
            if !(k1.is_finite() && k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
                return Err(Error::Config(format!("invalid BM25 parameters k1={k1} b={b}")));
            }
            let records = index_records(&seg, expansions.as_deref(), !no_meta)?;
            let index = InvertedIndex::build(&records, Bm25Params { k1, b })?;
            write_out(Some(&out), |w| lexical::write_index(&index, w))?;
            eprintln!("indexed {} passages, {} terms", index.num_items(), index.terms().count());
            Ok(())
        }
        Command::Embeddings { file, convert, format } => {
            let store = load_store(&file)?;
            let tokens: usize = store.iter().map(|(_, m)| m.rows()).sum();
            println!("items {} dim {} tokens {}", store.len(), store.dim(), tokens);
            if let Some(dest) = convert {
                write_out(Some(&dest), |w| match format {
                    EmbFormat::Binary => dense::write_binary(&store, w),
                    EmbFormat::Text => dense::write_text(&store, w),
                })?;
            }
            Ok(())
        }
        Command::Search {
            queries,
            mode,
            index,
            doc_embeddings,
            query_embeddings,
            k,
            fusion,
            c,
            tag,
            out,
        } => {
            check_tag(&tag)?;
            let lists = search(
                &queries,
                mode,
                index.as_deref(),
                (doc_embeddings.as_deref(), query_embeddings.as_deref()),
                k,
                fusion,
                c,
            )?;
            write_run(&run_lists(&tag, lists)?, out.as_deref())
        }
        Command::Rerank {
            stage,
            run,
            passages,
            queries,
            depth,
            aggregation,
            scorer,
            endpoint,
            timeout,
            tag,
            out,
        } => {
            if depth == Some(0) || (matches!(stage, RerankStage::Duo) && depth == Some(1)) {
                return Err(Error::Config("re-ranking depth too small".into()));
            }
            let timeout = Duration::try_from_secs_f64(timeout)
                .ok()
                .filter(|d| !d.is_zero())
                .ok_or_else(|| Error::Config(format!("invalid timeout {timeout}")))?;
            let spec = match scorer {
                ScorerChoice::Builtin => ScorerSpec::builtin(),
                ScorerChoice::External => ScorerSpec {
                    kind: ScorerKind::External,
                    endpoint: endpoint.clone(),
                    tag: String::new(),
                },
            };
            let input = read_run(&run)?;
            let tag = tag.unwrap_or_else(|| input.tag.clone());
            check_tag(&tag)?;
            let lists = rerank(stage, &input, &passages, &queries, depth, &aggregation, spec, timeout)?;
            write_run(&run_lists(&tag, lists)?, out.as_deref())
        }
        Command::Fuse {
            method,
            c,
            tag,
            out,
            mut inputs,
            runs,
        } => {
            inputs.extend(runs);
            let runs = inputs;
            let method = match method {
                FuseMethod::Mean => EnsembleMethod::MeanNormalized,
                FuseMethod::Rrf => EnsembleMethod::Rrf { c },
            };
            let runs = runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
            let mut fused = pipeline::ensemble_fuse(&runs, method)?;
            if let Some(tag) = tag {
                check_tag(&tag)?;
                fused.tag = tag;
            }
            write_run(&fused, out.as_deref())
        }
        Command::Eval {
            qrels,
            format,
            compare,
            threshold,
            gain,
            mut inputs,
            runs,
        } => {
            inputs.extend(runs);
            if threshold == 0 {
                return Err(Error::Config("--threshold must be at least 1".into()));
            }
            let gain = match gain {
                GainChoice::Linear => Gain::Linear,
                GainChoice::Exponential => Gain::Exponential,
            };
            evaluate(&qrels, &inputs, format, compare, EvalOptions { threshold, gain })
        }
        Command::Pipeline {
            config,
            threads,
            out,
            tag,
        } => {
            let mut cfg = rankcascade::parse_config(&config)?;
            if threads.is_some() {
                cfg.threads = threads;
            }
            if let Some(tag) = tag {
                cfg.tag = tag;
            }
            if out.is_some() {
                cfg.output = out;
            }
            let run = rankcascade::run_pipeline(&cfg)?;
            write_run(&run, cfg.output.as_deref())?;
            if let Some(qrels) = &cfg.inputs.qrels {
                let qrels = eval::parse_qrels(open(qrels)?)?;
                let report = eval::evaluate_run(
                    &run,
                    &qrels,
                    EvalOptions {
                        threshold: cfg.threshold,
                        gain: cfg.gain,
                    },
                )?;
                eprint!("{}", report.table());
            }
            Ok(())
        }
        Command::Synth {
            out,
            seed,
            passages,
            queries,
            mismatch,
            dim,
        } => {
            let spec = SyntheticSpec {
                seed,
                passages,
                queries,
                mismatch,
                dim,
            };
            spec.validate().map_err(Error::Config)?;
            let files = synthetic::generate(&spec).write_to(&out)?;
            eprintln!("wrote synthetic collection; run with --config {}", files.config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
