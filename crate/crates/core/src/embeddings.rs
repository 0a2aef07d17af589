//! Pretrained word-embedding tables.
//!
//! The text format is one entry per line: a word followed by
//! whitespace-separated numbers. Tables can also be written to a binary
//! cache for fast reload:
//!
//! ```text
//! magic   b"LNEMB\0" (6 bytes)
//! version u16 LE (1)
//! dim     u32 LE
//! count   u64 LE
//! count × { len: u32 LE, word: len bytes UTF-8, dim × f32 LE }
//! ```
//!
//! Entries are written in sorted word order, so the cache is a pure function
//! of the table contents.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 100;

const CACHE_MAGIC: &[u8; 6] = b"LNEMB\0";
const CACHE_VERSION: u16 = 1;
const MAX_DIM: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(EmbeddingTable {
            dim,
            entries: HashMap::new(),
            zero: vec![0.0; dim],
        })
    }

    /// Adds an entry unless the word is already present.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.entries.entry(word.into()).or_insert(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Exact match, then lowercase; unknown words map to the zero vector.
    pub fn lookup(&self, word: &str) -> &[f64] {
        if let Some(v) = self.entries.get(word) {
            return v;
        }
        let lower = word.to_lowercase();
        self.entries
            .get(&lower)
            .map(Vec::as_slice)
            .unwrap_or(&self.zero)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word) || self.entries.contains_key(&word.to_lowercase())
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut words: Vec<&String> = self.entries.keys().collect();
        words.sort();
        let mut out = Vec::with_capacity(20 + words.len() * (8 + 4 * self.dim));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(words.len() as u64).to_le_bytes());
        for w in words {
            out.extend_from_slice(&(w.len() as u32).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
            for &x in &self.entries[w] {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(CACHE_MAGIC.len())? != CACHE_MAGIC {
            return Err(Error::Format("not an embedding cache (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "unsupported embedding cache version {}",
                version
            )));
        }
        let dim = r.u32()? as usize;
        if dim > MAX_DIM {
            return Err(Error::Format(format!(
                "embedding dimension {} too large",
                dim
            )));
        }
        let count = r.u64()?;
        let mut table = EmbeddingTable::new(dim)?;
        // every entry needs at least 4 + 4*dim bytes
        let min_entry = 4 + 4 * dim as u64;
        if count.saturating_mul(min_entry) > r.remaining() as u64 {
            return Err(Error::Format("embedding cache truncated".into()));
        }
        for _ in 0..count {
            let len = r.u32()? as usize;
            let word = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("embedding cache word is not UTF-8".into()))?
                .to_string();
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(r.f32()? as f64);
            }
            table.insert(word, v)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after embedding cache".into()));
        }
        Ok(table)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}

/// Reads the plain-text format. With `expected_dim`, the first entry must
/// have that many components. A leading `count dim` header line is skipped.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    mut expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut first = true;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse("embeddings", lineno, e.to_string()))?;
        if std::mem::take(&mut first) {
            if let Some(d) = header_dim(&line) {
                if d > MAX_DIM {
                    return Err(Error::parse(
                        "embeddings",
                        lineno,
                        format!("dimension {} too large", d),
                    ));
                }
                if let Some(e) = expected_dim.filter(|&e| e != d) {
                    return Err(Error::parse(
                        "embeddings",
                        lineno,
                        format!("expected dimension {}, header says {}", e, d),
                    ));
                }
                expected_dim = Some(d);
                continue;
            }
        }
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::parse("embeddings", lineno, format!("invalid number {:?}", f))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if table.is_none() {
            if vector.is_empty() {
                return Err(Error::parse("embeddings", lineno, "entry has no vector"));
            }
            if let Some(d) = expected_dim {
                if d != vector.len() {
                    return Err(Error::parse(
                        "embeddings",
                        lineno,
                        format!("expected dimension {}, found {}", d, vector.len()),
                    ));
                }
            }
            table = Some(EmbeddingTable::new(vector.len())?);
        }
        let table = table.as_mut().expect("initialised above");
        if vector.len() != table.dim() {
            return Err(Error::parse(
                "embeddings",
                lineno,
                format!(
                    "vector has {} components, table dimension is {}",
                    vector.len(),
                    table.dim()
                ),
            ));
        }
        table.insert(word, vector)?;
    }
    match table {
        Some(t) => Ok(t),
        None => EmbeddingTable::new(expected_dim.unwrap_or(DEFAULT_DIM)),
    }
}

fn header_dim(line: &str) -> Option<usize> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        [count, dim] if count.parse::<usize>().is_ok() => dim.parse().ok().filter(|&d| d > 1),
        _ => None,
    }
}

/// Loads an embedding file, accepting either the text format or a binary
/// cache (recognised by its magic header).
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(CACHE_MAGIC) {
        let table = EmbeddingTable::from_cache_bytes(&bytes)?;
        if let Some(d) = expected_dim {
            if d != table.dim() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: table.dim(),
                });
            }
        }
        return Ok(table);
    }
    drop(bytes);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), expected_dim)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_two_entries() {
        let t = read_embeddings("a 1 0\nb 0 1\n".as_bytes(), None).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("b"), &[0.0, 1.0]);
    }

    #[test]
    fn inconsistent_length_names_line() {
        let err = read_embeddings("a 1 0\nb 1\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{}", err);
    }

    #[test]
    fn expected_dim_mismatch() {
        assert!(read_embeddings("a 1 0\n".as_bytes(), Some(3)).is_err());
        assert!(read_embeddings("a 1 0 2\n".as_bytes(), Some(3)).is_ok());
    }

    #[test]
    fn dimension_from_first_line() {
        let line: String = std::iter::once("w".to_string())
            .chain((0..100).map(|i| format!("{}", i as f64 / 100.0)))
            .collect::<Vec<_>>()
            .join(" ");
        let t = read_embeddings(line.as_bytes(), None).unwrap();
        assert_eq!(t.dim(), 100);
    }

    #[test]
    fn duplicates_keep_first() {
        let t = read_embeddings("a 1 0\na 0 1\n".as_bytes(), None).unwrap();
        assert_eq!(t.lookup("a"), &[1.0, 0.0]);
    }

    #[test]
    fn count_dim_header_is_skipped() {
        let t = read_embeddings("2 3\ncup 1 2 3\ntable 0 0 1\n".as_bytes(), None).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert!(read_embeddings("2 3\ncup 1 2\n".as_bytes(), None).is_err());
        assert!(read_embeddings("2 3\ncup 1 2 3\n".as_bytes(), Some(4)).is_err());
        assert!(read_embeddings("1 99999999999\n".as_bytes(), None).is_err());
        // a one-component entry is not mistaken for a header
        assert_eq!(
            read_embeddings("7 1\n".as_bytes(), None).unwrap().get("7"),
            Some(&[1.0][..])
        );
    }

    #[test]
    fn oov_and_case_fallback() {
        let t = read_embeddings("dog 1 2\n".as_bytes(), None).unwrap();
        assert_eq!(t.lookup("dog"), &[1.0, 2.0]);
        assert_eq!(t.lookup("Dog"), &[1.0, 2.0]);
        assert_eq!(t.lookup("cat"), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let t = read_embeddings("b 0.5 -1\na 1 0.25\n".as_bytes(), None).unwrap();
        let bytes = t.to_cache_bytes();
        assert_eq!(EmbeddingTable::from_cache_bytes(&bytes).unwrap(), t);
        assert!(EmbeddingTable::from_cache_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..16)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn self_cosine_is_one(u in nonzero_vec()) {
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            (u, v) in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )),
            alpha in 0.01f64..100.0,
        ) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
