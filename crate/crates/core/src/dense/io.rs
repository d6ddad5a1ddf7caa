//! Embedding store files.
//!
//! Binary (all integers u32 little-endian, floats f32 little-endian):
//!
//! ```text
//! "CRK1" dim count { id_len id_bytes token_count f32[token_count * dim] }*
//! ```
//!
//! Text: a `dim <d>` header line, then one `item_id<TAB>[[f, ...], ...]`
//! line per item. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{DenseError, EmbeddingStore, Matrix};

pub const MAGIC: &[u8; 4] = b"CRK1";

fn truncated(what: &str) -> DenseError {
    DenseError::Format(format!("truncated file while reading {what}"))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, DenseError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => truncated(what),
        _ => DenseError::Io(e),
    })?;
    Ok(u32::from_le_bytes(buf))
}

fn read_bytes<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>, DenseError> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(truncated(what));
    }
    Ok(buf)
}

/// Everything after the magic.
fn read_binary_body<R: Read>(mut r: R) -> Result<EmbeddingStore, DenseError> {
    let dim = read_u32(&mut r, "dim")? as usize;
    if dim == 0 {
        return Err(DenseError::Format("dim must be at least 1".into()));
    }
    let count = read_u32(&mut r, "item count")?;
    let mut store = EmbeddingStore::new(dim);
    for _ in 0..count {
        let id_len = read_u32(&mut r, "id length")? as usize;
        let id = String::from_utf8(read_bytes(&mut r, id_len, "item id")?)
            .map_err(|_| DenseError::Format("item id is not UTF-8".into()))?;
        let tokens = read_u32(&mut r, "token count")? as usize;
        let raw = read_bytes(&mut r, tokens * dim * 4, "token rows")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(id, Matrix::new(dim, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DenseError::Format("trailing bytes after last item".into()));
    }
    Ok(store)
}

pub fn read_binary<R: Read>(mut r: R) -> Result<EmbeddingStore, DenseError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(DenseError::Format("bad magic, expected CRK1".into()));
    }
    read_binary_body(r)
}

pub fn write_binary<W: Write>(store: &EmbeddingStore, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.dim() as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (id, m) in store.iter() {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_text<R: BufRead>(r: R) -> Result<EmbeddingStore, DenseError> {
    let mut lines = r.lines().enumerate();
    let dim = loop {
        let Some((_, line)) = lines.next() else {
            return Err(truncated("dim header"));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break line
            .trim()
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| DenseError::Format("expected `dim <d>` header".into()))?;
    };
    let mut store = EmbeddingStore::new(dim);
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| DenseError::Format(format!("line {}: {msg}", n + 1));
        let (id, json) = line
            .split_once('\t')
            .ok_or_else(|| at("expected `item_id<TAB>[[...]]`".into()))?;
        let rows: Vec<Vec<f32>> =
            serde_json::from_str(json).map_err(|e| at(format!("bad matrix: {e}")))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(at(format!("row of {} values, declared dim {dim}", bad.len())));
        }
        let data = rows.into_iter().flatten().collect();
        store.insert(id.trim(), Matrix::new(dim, data)?)?;
    }
    Ok(store)
}

pub fn write_text<W: Write>(store: &EmbeddingStore, mut w: W) -> std::io::Result<()> {
    writeln!(w, "dim {}", store.dim())?;
    for (id, m) in store.iter() {
        let rows: Vec<&[f32]> = m.iter_rows().collect();
        let json = serde_json::to_string(&rows).map_err(std::io::Error::other)?;
        writeln!(w, "{id}\t{json}")?;
    }
    w.flush()
}

/// Load either format, chosen by the leading magic bytes.
pub fn load_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, DenseError> {
    let mut reader = BufReader::new(File::open(path)?);
    let head = reader.fill_buf()?;
    if head.starts_with(MAGIC) {
        read_binary(reader)
    } else {
        read_text(reader)
    }
}
