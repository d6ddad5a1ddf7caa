//! Document ingestion, sentence splitting, sliding-window passages and
//! expansion-query attachment.
//!
//! Documents are cut into windows of `window` sentences that start every
//! `stride` sentences. Each passage can carry generated expansion queries,
//! which are appended to its text when it is rendered for indexing.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("invalid window/stride: window={window}, stride={stride} (need window >= 1 and 1 <= stride <= window)")]
    InvalidWindow { window: usize, stride: usize },
    #[error("duplicate docid {0:?}")]
    DuplicateDocId(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub docid: String,
    pub url: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Passage {
    pub passage_id: String,
    pub parent: String,
    pub sentence_offset: usize,
    pub text: String,
    pub expansion_queries: Vec<String>,
}

/// Split on `.`, `!` or `?` when followed by whitespace or end of input.
///
/// Returned sentences are trimmed slices of `text`; whitespace-only pieces
/// are dropped. There is no abbreviation handling, so "Dr. Who" splits.
pub fn split_sentences(text: &str) -> Vec<&str> {
    sentence_spans(text)
        .into_iter()
        .map(|(s, e)| &text[s..e])
        .collect()
}

/// Byte spans of the trimmed sentences of `text`.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_trimmed(text, start, end, &mut spans);
                start = end;
            }
        }
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        let s = start + lead;
        spans.push((s, s + trimmed.len()));
    }
}

/// Sentence offsets of the windows over `n` sentences.
///
/// Windows start at 0, stride, 2*stride, ... and emission stops after the
/// first window whose end reaches `n`.
pub fn window_offsets(n: usize, window: usize, stride: usize) -> Result<Vec<usize>, CorpusError> {
    if window == 0 || stride == 0 || stride > window {
        return Err(CorpusError::InvalidWindow { window, stride });
    }
    let mut offsets = Vec::new();
    if n == 0 {
        return Ok(offsets);
    }
    let mut start = 0;
    loop {
        offsets.push(start);
        if start + window >= n {
            break;
        }
        start += stride;
    }
    Ok(offsets)
}

pub fn segment_document(
    doc: &Document,
    window: usize,
    stride: usize,
) -> Result<Vec<Passage>, CorpusError> {
    let spans = sentence_spans(&doc.body);
    let offsets = window_offsets(spans.len(), window, stride)?;
    if spans.is_empty() {
        return Err(CorpusError::EmptyDocument(doc.docid.clone()));
    }
    Ok(offsets
        .into_iter()
        .enumerate()
        .map(|(index, offset)| {
            let last = (offset + window).min(spans.len()) - 1;
            Passage {
                passage_id: format!("{}#{}", doc.docid, index),
                parent: doc.docid.clone(),
                sentence_offset: offset,
                text: doc.body[spans[offset].0..spans[last].1].to_string(),
                expansion_queries: Vec::new(),
            }
        })
        .collect())
}

/// Segment every document, preserving input order in the output.
pub fn segment_corpus(
    docs: &[Document],
    window: usize,
    stride: usize,
) -> Result<Vec<Passage>, CorpusError> {
    let per_doc: Vec<Vec<Passage>> = docs
        .par_iter()
        .map(|d| segment_document(d, window, stride))
        .collect::<Result<_, _>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

pub fn attach_expansions<I, S>(mut p: Passage, queries: I) -> Passage
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    p.expansion_queries.extend(queries.into_iter().map(Into::into));
    p
}

/// Outcome of merging an expansion file into a passage set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpansionReport {
    pub attached: usize,
    pub unknown: usize,
}

/// Attach `(passage_id, query)` pairs in file order. Pairs naming a
/// passage that does not exist are counted, not fatal.
pub fn attach_expansion_file(
    passages: &mut [Passage],
    expansions: &[(String, String)],
) -> ExpansionReport {
    let positions: BTreeMap<&str, usize> = passages
        .iter()
        .enumerate()
        .map(|(i, p)| (p.passage_id.as_str(), i))
        .collect();
    let mut grouped: Vec<Vec<&str>> = vec![Vec::new(); passages.len()];
    let mut report = ExpansionReport::default();
    for (pid, query) in expansions {
        match positions.get(pid.as_str()) {
            Some(&i) => {
                grouped[i].push(query.as_str());
                report.attached += 1;
            }
            None => report.unknown += 1,
        }
    }
    for (p, qs) in passages.iter_mut().zip(grouped) {
        if !qs.is_empty() {
            *p = attach_expansions(std::mem::take(p), qs);
        }
    }
    report
}

/// Text handed to the lexical index: optional url and title, the passage,
/// then every expansion query, single-space joined with empty fields skipped.
pub fn render_index_text(p: &Passage, parent: &Document, prepend_meta: bool) -> String {
    let meta: &[&str] = if prepend_meta {
        &[parent.url.as_str(), parent.title.as_str()]
    } else {
        &[]
    };
    meta.iter()
        .copied()
        .chain(std::iter::once(p.text.as_str()))
        .chain(p.expansion_queries.iter().map(String::as_str))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Read a corpus file: `docid \t url \t title \t body` per line.
///
/// The body is everything after the third tab. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::Format {
                line: n + 1,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let docid = fields[0].trim();
        validate_id(docid, n + 1)?;
        if !seen.insert(docid.to_string()) {
            return Err(CorpusError::DuplicateDocId(docid.to_string()));
        }
        docs.push(Document {
            docid: docid.to_string(),
            url: fields[1].trim().to_string(),
            title: fields[2].trim().to_string(),
            body: fields[3].to_string(),
        });
    }
    Ok(docs)
}

fn validate_id(id: &str, line: usize) -> Result<(), CorpusError> {
    if id.is_empty() {
        return Err(CorpusError::Format {
            line,
            msg: "empty id".into(),
        });
    }
    if id.chars().any(char::is_whitespace) {
        return Err(CorpusError::Format {
            line,
            msg: format!("id {id:?} contains whitespace"),
        });
    }
    Ok(())
}

/// Read a two-column file `key \t text`. Used for expansion files
/// (`passage_id \t query`) and query files (`query_id \t text`).
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<(String, String)>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let Some((key, text)) = line.split_once('\t') else {
            return Err(CorpusError::Format {
                line: n + 1,
                msg: "expected `id<TAB>text`".into(),
            });
        };
        let key = key.trim();
        validate_id(key, n + 1)?;
        out.push((key.to_string(), text.trim().to_string()));
    }
    Ok(out)
}

/// Inverse of [`read_corpus`]. Tabs and newlines inside fields become spaces.
pub fn write_corpus<W: std::io::Write>(docs: &[Document], mut w: W) -> std::io::Result<()> {
    for d in docs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            d.docid,
            one_line(&d.url),
            one_line(&d.title),
            one_line(&d.body)
        )?;
    }
    Ok(())
}

/// Inverse of [`read_pairs`].
pub fn write_pairs<W: std::io::Write>(pairs: &[(String, String)], mut w: W) -> std::io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "{k}\t{}", one_line(v))?;
    }
    Ok(())
}

/// Passage file written by the `segment` command:
/// `passage_id \t parent \t sentence_offset \t text`.
pub fn write_passages<W: std::io::Write>(passages: &[Passage], mut w: W) -> std::io::Result<()> {
    for p in passages {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.passage_id,
            p.parent,
            p.sentence_offset,
            one_line(&p.text)
        )?;
    }
    Ok(())
}

pub fn read_passages<R: BufRead>(reader: R) -> Result<Vec<Passage>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        let bad = |msg: String| CorpusError::Format { line: n + 1, msg };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let offset = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad sentence offset {:?}", fields[2])))?;
        out.push(Passage {
            passage_id: fields[0].to_string(),
            parent: fields[1].to_string(),
            sentence_offset: offset,
            text: fields[3].to_string(),
            expansion_queries: Vec::new(),
        });
    }
    Ok(out)
}

/// Tabs and newlines inside text would break the line formats.
pub(crate) fn one_line(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}
