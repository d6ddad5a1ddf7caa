//! Single-file text format for [`InvertedIndex`].
//!
//! ```text
//! rankcascade-bm25 1
//! N 2
//! avgdl 2
//! k1 0.9
//! b 0.4
//! items
//! d1 2
//! d2 2
//! postings
//! a d1:1 d2:1
//! b d1:1
//! c d2:1
//! ```
//!
//! Floats use the shortest representation that parses back to the same
//! value. Item lines are `item_id length` in ascending id order; postings
//! lines are `term item_id:tf ...` sorted by term, then by item id. `N` and
//! `avgdl` are checked against the item section on load.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{Bm25Params, IndexError, InvertedIndex, Posting};

const MAGIC: &str = "rankcascade-bm25 1";

pub fn write_index<W: Write>(idx: &InvertedIndex, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "N {}", idx.num_items())?;
    writeln!(w, "avgdl {}", idx.avgdl)?;
    writeln!(w, "k1 {}", idx.params.k1)?;
    writeln!(w, "b {}", idx.params.b)?;
    writeln!(w, "items")?;
    for (id, len) in idx.item_ids.iter().zip(&idx.doc_lengths) {
        writeln!(w, "{id} {len}")?;
    }
    writeln!(w, "postings")?;
    for (term, list) in &idx.postings {
        write!(w, "{term}")?;
        for p in list {
            write!(w, " {}:{}", idx.item_ids[p.item as usize], p.tf)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<String>, IndexError> {
        self.line += 1;
        self.inner.next().transpose().map_err(IndexError::from)
    }

    fn expect(&mut self) -> Result<String, IndexError> {
        self.next()?.ok_or_else(|| self.err("unexpected end of file"))
    }

    fn err(&self, msg: impl Into<String>) -> IndexError {
        IndexError::Format {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn header<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, IndexError> {
        let line = self.expect()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key} <value>`")))?;
        value
            .trim()
            .parse()
            .map_err(|_| self.err(format!("bad value for {key}: {value:?}")))
    }
}

pub fn read_index<R: BufRead>(reader: R) -> Result<InvertedIndex, IndexError> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    if lines.expect()?.trim_end() != MAGIC {
        return Err(lines.err("not a rankcascade BM25 index"));
    }
    let n: usize = lines.header("N")?;
    let avgdl: f64 = lines.header("avgdl")?;
    let k1: f64 = lines.header("k1")?;
    let b: f64 = lines.header("b")?;
    if lines.expect()? != "items" {
        return Err(lines.err("expected `items`"));
    }

    let mut item_ids: Vec<String> = Vec::with_capacity(n);
    let mut doc_lengths = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.expect()?;
        let (id, len) = line
            .rsplit_once(' ')
            .ok_or_else(|| lines.err("expected `item_id length`"))?;
        let len: u32 = len.parse().map_err(|_| lines.err("bad document length"))?;
        if let Some(prev) = item_ids.last() {
            if prev.as_str() >= id {
                return Err(lines.err("item ids not strictly ascending"));
            }
        }
        item_ids.push(id.to_string());
        doc_lengths.push(len);
    }
    if lines.expect()? != "postings" {
        return Err(lines.err("expected `postings`"));
    }

    let mut postings = BTreeMap::new();
    while let Some(line) = lines.next()? {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let term = parts.next().unwrap_or_default().to_string();
        let mut list: Vec<Posting> = Vec::new();
        for entry in parts {
            let (id, tf) = entry
                .rsplit_once(':')
                .ok_or_else(|| lines.err(format!("bad posting {entry:?}")))?;
            let tf: u32 = tf.parse().map_err(|_| lines.err(format!("bad tf in {entry:?}")))?;
            if tf == 0 {
                return Err(lines.err("term frequency must be >= 1"));
            }
            let item = item_ids
                .binary_search_by(|probe: &String| probe.as_str().cmp(id))
                .map_err(|_| lines.err(format!("posting names unknown item {id:?}")))?;
            if list.last().is_some_and(|p| p.item >= item as u32) {
                return Err(lines.err("postings not sorted by item id"));
            }
            list.push(Posting {
                item: item as u32,
                tf,
            });
        }
        if list.is_empty() {
            return Err(lines.err(format!("term {term:?} has no postings")));
        }
        if postings.insert(term, list).is_some() {
            return Err(lines.err("duplicate term"));
        }
    }

    let idx = InvertedIndex::from_parts(item_ids, doc_lengths, postings, Bm25Params { k1, b });
    if (idx.avgdl - avgdl).abs() > 1e-9 * avgdl.abs().max(1.0) {
        return Err(IndexError::Format {
            line: 3,
            msg: format!("avgdl {avgdl} disagrees with item lengths ({})", idx.avgdl),
        });
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::build_index;

    #[test]
    fn round_trip() {
        let idx = build_index(
            &[("d2", "a c c"), ("d1", "a b"), ("x:y", "b b b z")],
            1.2,
            0.75,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let back = read_index(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn documented_layout() {
        let idx = build_index(&[("d1", "a b"), ("d2", "a c")], 0.9, 0.4).unwrap();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "rankcascade-bm25 1\nN 2\navgdl 2\nk1 0.9\nb 0.4\nitems\nd1 2\nd2 2\npostings\na d1:1 d2:1\nb d1:1\nc d2:1\n"
        );
    }

    #[test]
    fn rejects_corruption() {
        let bad = "rankcascade-bm25 1\nN 1\navgdl 2\nk1 0.9\nb 0.4\nitems\nd1 2\npostings\na d9:1\n";
        assert!(matches!(read_index(bad.as_bytes()), Err(IndexError::Format { line: 9, .. })));
        let truncated = "rankcascade-bm25 1\nN 3\n";
        assert!(matches!(read_index(truncated.as_bytes()), Err(IndexError::Format { .. })));
        let wrong_avg = "rankcascade-bm25 1\nN 1\navgdl 5\nk1 0.9\nb 0.4\nitems\nd1 2\npostings\n";
        assert!(matches!(read_index(wrong_avg.as_bytes()), Err(IndexError::Format { .. })));
    }
}
