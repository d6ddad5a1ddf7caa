//! Multi-stage retrieval and ranking.
//!
//! Documents are split into overlapping sentence windows, expanded with
//! generated queries and indexed for BM25. Token-embedding matrices support
//! exact MaxSim retrieval. Candidate lists from both retrievers are fused,
//! re-scored point-wise (mono) and then pair-wise (duo), and runs from
//! several re-rankers can be ensembled. Runs are evaluated against graded
//! judgments with MAP@100, NDCG@5, NDCG@10 and R@100.

pub mod config;
pub mod corpus;
pub mod dense;
pub mod eval;
pub mod lexical;
pub mod pipeline;
pub mod rank;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, parse_config_str};
pub use pipeline::{run_pipeline, Engine, PipelineConfig};
pub use rank::{RankedList, ScoredCandidate, Stage};

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Index(#[from] lexical::IndexError),
    #[error(transparent)]
    Dense(#[from] dense::DenseError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stage(#[from] pipeline::StageFailure),
}

impl Error {
    /// Process exit status: 1 usage/config, 2 data/format, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Stage(_) => 3,
            _ => 2,
        }
    }
}
