//! Deterministic synthetic collections for end-to-end checks.
//!
//! Every document is short enough to yield exactly one passage. Each query
//! owns a handful of graded passages and some topical distractors:
//!
//! * grade 3 passages contain all four query terms, grade 2 three of them,
//!   grade 1 two of them;
//! * distractors repeat a single query term many times and sit close to the
//!   query in embedding space, so both retrievers like them;
//! * for vocabulary-mismatch queries the judged passages use synonyms
//!   instead of the query terms. Only their embeddings point at the query.
//!
//! Everything else is background text with random embeddings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, Document};
use crate::dense::{self, EmbeddingStore, Matrix};
use crate::eval::{self, Qrels};
use crate::pipeline::EngineData;
use crate::Error;

const TERMS_PER_QUERY: usize = 4;
const DISTRACTORS_PER_QUERY: usize = 8;
const DISTRACTOR_TF: usize = 5;
const SENTENCES: usize = 6;
const WORDS_PER_SENTENCE: usize = 8;
const BACKGROUND_WORDS: usize = 3000;
const DOC_TOKENS: usize = 6;
const QUERY_TOKENS: usize = 4;

// (grade, number of query terms present)
const JUDGED: [(u32, usize); 5] = [(3, 4), (2, 3), (2, 3), (1, 2), (1, 2)];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub passages: usize,
    pub queries: usize,
    /// How many of the queries are vocabulary-mismatch queries.
    pub mismatch: usize,
    pub dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 20,
            passages: 2000,
            queries: 50,
            mismatch: 10,
            dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub documents: Vec<Document>,
    pub expansions: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    pub qrels: Qrels,
    pub doc_embeddings: EmbeddingStore,
    pub query_embeddings: EmbeddingStore,
    pub mismatch_queries: Vec<String>,
}

/// Paths written by [`SyntheticCollection::write_to`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub dir: PathBuf,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub expansions: PathBuf,
    pub qrels: PathBuf,
    pub doc_embeddings: PathBuf,
    pub query_embeddings: PathBuf,
    pub config: PathBuf,
}

#[derive(Clone, Copy)]
enum Role {
    Background,
    Judged { query: usize, grade: u32, terms: usize },
    Distractor { query: usize },
}

/// Pronounceable pseudo-word for an index below 70^3.
fn word(mut i: usize) -> String {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOW: &[u8] = b"aeiou";
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        let syl = i % 70;
        i /= 70;
        w.push(CONS[syl / 5] as char);
        w.push(VOW[syl % 5] as char);
    }
    w
}

fn query_term(q: usize, j: usize) -> String {
    word(100_000 + q * TERMS_PER_QUERY + j)
}

fn synonym(q: usize, j: usize) -> String {
    word(200_000 + q * TERMS_PER_QUERY + j)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector whose cosine with `u` is `s`.
fn blend(rng: &mut ChaCha8Rng, u: &[f64], s: f64) -> Vec<f64> {
    loop {
        let r = random_unit(rng, u.len());
        let along: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum();
        let orth: Vec<f64> = r.iter().zip(u).map(|(a, b)| a - along * b).collect();
        let n = orth.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            continue;
        }
        let t = (1.0 - s * s).max(0.0).sqrt();
        return u.iter().zip(&orth).map(|(a, o)| s * a + t * o / n).collect();
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> Matrix {
    let rows: Vec<Vec<f32>> = rows
        .into_iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.into_iter().map(|x| (x / n) as f32).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("rows share a dimension")
}

/// Embedding similarity of a passage's topical token to its query.
fn strength(role: Role, mismatch: bool) -> Option<f64> {
    match (role, mismatch) {
        (Role::Background, _) => None,
        (Role::Distractor { .. }, true) => None,
        (Role::Distractor { .. }, false) => Some(0.55),
        (Role::Judged { grade, .. }, true) => Some(0.75 + 0.05 * grade as f64),
        (Role::Judged { grade, .. }, false) => Some(0.4 + 0.05 * grade as f64),
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        let needed = self.queries * (JUDGED.len() + DISTRACTORS_PER_QUERY);
        if self.passages < needed {
            return Err(format!("{} queries need at least {needed} passages", self.queries));
        }
        if self.mismatch > self.queries {
            return Err("more mismatch queries than queries".into());
        }
        if self.dim < 2 {
            return Err("embedding dim must be at least 2".into());
        }
        Ok(())
    }
}

/// # Panics
///
/// If `spec` fails [`SyntheticSpec::validate`].
pub fn generate(spec: &SyntheticSpec) -> SyntheticCollection {
    if let Err(e) = spec.validate() {
        panic!("invalid synthetic spec: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut roles = vec![Role::Background; spec.passages];
    let mut slots: Vec<usize> = (0..spec.passages).collect();
    slots.shuffle(&mut rng);
    let mut slots = slots.into_iter();
    for q in 0..spec.queries {
        for &(grade, terms) in &JUDGED {
            roles[slots.next().unwrap()] = Role::Judged { query: q, grade, terms };
        }
        for _ in 0..DISTRACTORS_PER_QUERY {
            roles[slots.next().unwrap()] = Role::Distractor { query: q };
        }
    }
    // mismatch queries are spread through the id space
    let is_mismatch = |q: usize| spec.mismatch > 0 && q * spec.mismatch % spec.queries < spec.mismatch;
    let qid = |q: usize| format!("Q{q:03}");
    let topics: Vec<Vec<f64>> = (0..spec.queries).map(|_| random_unit(&mut rng, spec.dim)).collect();

    let mut documents = Vec::with_capacity(spec.passages);
    let mut expansions = Vec::new();
    let mut qrels = Qrels::new();
    let mut doc_embeddings = EmbeddingStore::new(spec.dim);
    for (i, &role) in roles.iter().enumerate() {
        let docid = format!("D{i:05}");
        let mut words: Vec<String> = (0..SENTENCES * WORDS_PER_SENTENCE)
            .map(|_| word(rng.random_range(0..BACKGROUND_WORDS)))
            .collect();
        let planted: Vec<String> = match role {
            Role::Background => Vec::new(),
            Role::Judged { query, terms, .. } => {
                let mut js: Vec<usize> = (0..TERMS_PER_QUERY).collect();
                js.shuffle(&mut rng);
                js.into_iter()
                    .take(terms)
                    .map(|j| if is_mismatch(query) { synonym(query, j) } else { query_term(query, j) })
                    .collect()
            }
            Role::Distractor { query } => {
                let t = query_term(query, rng.random_range(0..TERMS_PER_QUERY));
                vec![t; DISTRACTOR_TF]
            }
        };
        let mut positions: Vec<usize> = (0..words.len()).collect();
        positions.shuffle(&mut rng);
        for (pos, w) in positions.into_iter().zip(planted) {
            words[pos] = w;
        }
        let body = words
            .chunks(WORDS_PER_SENTENCE)
            .map(|s| format!("{}.", s.join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        let title = format!(
            "{} {}",
            word(rng.random_range(0..BACKGROUND_WORDS)),
            word(rng.random_range(0..BACKGROUND_WORDS))
        );
        if matches!(role, Role::Background) && rng.random_range(0..10) == 0 {
            let q: Vec<&str> = (0..3)
                .map(|_| words[rng.random_range(0..words.len())].as_str())
                .collect();
            expansions.push((format!("{docid}#0"), q.join(" ")));
        }

        let topic = match role {
            Role::Judged { query, .. } | Role::Distractor { query } => {
                strength(role, is_mismatch(query)).map(|s| blend(&mut rng, &topics[query], s))
            }
            Role::Background => None,
        };
        let rows: Vec<Vec<f64>> = topic
            .into_iter()
            .chain(std::iter::repeat_with(|| random_unit(&mut rng, spec.dim)))
            .take(DOC_TOKENS)
            .collect();
        doc_embeddings
            .insert(format!("{docid}#0"), to_matrix(rows))
            .expect("generated rows are unit length");

        match role {
            Role::Judged { query, grade, .. } => qrels.insert(&qid(query), &format!("{docid}#0"), grade),
            Role::Distractor { query } => qrels.insert(&qid(query), &format!("{docid}#0"), 0),
            Role::Background => Ok(()),
        }
        .expect("each passage is judged once");

        documents.push(Document {
            url: format!("https://example.org/{docid}"),
            docid,
            title,
            body,
        });
    }

    let mut queries = Vec::with_capacity(spec.queries);
    let mut query_embeddings = EmbeddingStore::new(spec.dim);
    let mut mismatch_queries = Vec::new();
    for (q, topic) in topics.iter().enumerate() {
        let text: Vec<String> = (0..TERMS_PER_QUERY).map(|j| query_term(q, j)).collect();
        queries.push((qid(q), text.join(" ")));
        let rows = (0..QUERY_TOKENS).map(|_| blend(&mut rng, topic, 0.95)).collect();
        query_embeddings
            .insert(qid(q), to_matrix(rows))
            .expect("generated rows are unit length");
        if is_mismatch(q) {
            mismatch_queries.push(qid(q));
        }
    }

    SyntheticCollection {
        documents,
        expansions,
        queries,
        qrels,
        doc_embeddings,
        query_embeddings,
        mismatch_queries,
    }
}

impl SyntheticCollection {
    pub fn engine_data(&self) -> EngineData {
        EngineData {
            documents: self.documents.clone(),
            expansions: self.expansions.clone(),
            queries: self.queries.clone(),
            doc_store: Some(self.doc_embeddings.clone()),
            query_store: Some(self.query_embeddings.clone()),
        }
    }

    /// Write every input file plus a hybrid mono+duo `pipeline.toml`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<SyntheticFiles, Error> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let files = SyntheticFiles {
            dir: dir.to_path_buf(),
            corpus: dir.join("corpus.tsv"),
            queries: dir.join("queries.tsv"),
            expansions: dir.join("expansions.tsv"),
            qrels: dir.join("qrels.txt"),
            doc_embeddings: dir.join("passages.emb"),
            query_embeddings: dir.join("queries.emb"),
            config: dir.join("pipeline.toml"),
        };
        write_file(&files.corpus, |w| corpus::write_corpus(&self.documents, w))?;
        write_file(&files.queries, |w| corpus::write_pairs(&self.queries, w))?;
        write_file(&files.expansions, |w| corpus::write_pairs(&self.expansions, w))?;
        write_file(&files.qrels, |w| eval::write_qrels(&self.qrels, w))?;
        write_file(&files.doc_embeddings, |w| dense::write_binary(&self.doc_embeddings, w))?;
        write_file(&files.query_embeddings, |w| dense::write_binary(&self.query_embeddings, w))?;
        let config = "tag = \"synthetic\"\n\
                      \n[corpus]\npath = \"corpus.tsv\"\nexpansions = \"expansions.tsv\"\n\
                      \n[queries]\npath = \"queries.tsv\"\nembeddings = \"queries.emb\"\n\
                      \n[retrieval]\nmode = \"hybrid\"\nembeddings = \"passages.emb\"\n\
                      \n[mono]\ndepth = 100\n\
                      \n[duo]\ndepth = 20\n\
                      \n[eval]\nqrels = \"qrels.txt\"\n";
        write_file(&files.config, |w| w.write_all(config.as_bytes()))?;
        Ok(files)
    }
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::tokenize;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            passages: 200,
            queries: 10,
            mismatch: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn words_are_distinct() {
        let ws: std::collections::HashSet<String> = (0..5000).map(word).collect();
        assert_eq!(ws.len(), 5000);
        assert_ne!(query_term(3, 1), synonym(3, 1));
    }

    #[test]
    fn same_seed_same_collection() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.doc_embeddings, b.doc_embeddings);
        let c = generate(&SyntheticSpec { seed: 1, ..small() });
        assert_ne!(a.documents, c.documents);
    }

    #[test]
    fn shape() {
        let c = generate(&small());
        assert_eq!(c.documents.len(), 200);
        assert_eq!(c.queries.len(), 10);
        assert_eq!(c.mismatch_queries.len(), 2);
        assert_eq!(c.doc_embeddings.len(), 200);
        for d in &c.documents {
            let p = corpus::segment_document(d, 10, 5).unwrap();
            assert_eq!(p.len(), 1);
        }
    }

    #[test]
    fn mismatch_passages_share_no_terms() {
        let c = generate(&small());
        let docs: std::collections::HashMap<String, &Document> = c
            .documents
            .iter()
            .map(|d| (format!("{}#0", d.docid), d))
            .collect();
        for q in &c.mismatch_queries {
            let text = &c.queries.iter().find(|(id, _)| id == q).unwrap().1;
            let qterms = tokenize(text);
            for (item, grade) in c.qrels.query(q).unwrap() {
                if *grade == 0 {
                    continue;
                }
                let d = docs[item];
                let dterms = tokenize(&format!("{} {} {}", d.url, d.title, d.body));
                assert!(qterms.iter().all(|t| !dterms.contains(t)), "{q} {item}");
            }
        }
    }
}
