//! On-disk index format, little-endian:
//!
//! ```text
//! magic "IRWBM25\0" | version u32 | k1 f64 | b f64
//! lowercase u8 | stemmer u8 | has_stopwords u8 [| n varint | n strings]
//! doc_count varint | doc_count x (id string, length varint)
//! term_count varint | term_count x (term string, df varint, df x (doc delta varint, tf varint))
//! ```
//!
//! Strings are a varint byte length followed by UTF-8 bytes. Terms are
//! written in sorted order so identical indexes produce identical files.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Analyzer, Bm25Index, Bm25Params, Posting, Stemmer};
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"IRWBM25\0";
pub const INDEX_FORMAT_VERSION: u32 = 1;

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_index(index: &Bm25Index) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&index.params.k1.to_le_bytes());
    out.extend_from_slice(&index.params.b.to_le_bytes());

    let a = &index.analyzer;
    out.push(a.lowercase as u8);
    out.push(match a.stemmer {
        Stemmer::None => 0,
        Stemmer::Porter => 1,
    });
    match &a.stopwords {
        None => out.push(0),
        Some(words) => {
            out.push(1);
            put_varint(&mut out, words.len() as u64);
            for w in words {
                put_str(&mut out, w);
            }
        }
    }

    put_varint(&mut out, index.doc_ids.len() as u64);
    for (id, &len) in index.doc_ids.iter().zip(&index.doc_lens) {
        put_str(&mut out, id);
        put_varint(&mut out, len as u64);
    }

    let mut terms: Vec<&String> = index.postings.keys().collect();
    terms.sort();
    put_varint(&mut out, terms.len() as u64);
    for term in terms {
        let postings = &index.postings[term];
        put_str(&mut out, term);
        put_varint(&mut out, postings.len() as u64);
        let mut prev = 0u32;
        for p in postings {
            put_varint(&mut out, (p.doc - prev) as u64);
            put_varint(&mut out, p.tf as u64);
            prev = p.doc;
        }
    }
    out
}

pub fn write_index(path: impl AsRef<Path>, index: &Bm25Index) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_index(index))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, what: &str) -> Error {
        Error::parse(format!("index byte {}", self.pos), what.to_string())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| self.err("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.u8()?;
            v |= ((byte & 0x7f) as u64) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("varint overflow"))
    }

    fn u32_varint(&mut self) -> Result<u32> {
        u32::try_from(self.varint()?).map_err(|_| self.err("value exceeds u32"))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.varint()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }
}

pub fn decode_index(buf: &[u8]) -> Result<Bm25Index> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != INDEX_MAGIC {
        return Err(Error::parse("index header", "bad magic bytes"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != INDEX_FORMAT_VERSION {
        return Err(Error::parse(
            "index header",
            format!("unsupported format version {version} (expected {INDEX_FORMAT_VERSION})"),
        ));
    }
    let params = Bm25Params {
        k1: r.f64()?,
        b: r.f64()?,
    };
    let lowercase = r.u8()? != 0;
    let stemmer = match r.u8()? {
        0 => Stemmer::None,
        1 => Stemmer::Porter,
        _ => return Err(r.err("unknown stemmer")),
    };
    let stopwords = match r.u8()? {
        0 => None,
        _ => {
            let n = r.varint()?;
            let mut words = BTreeSet::new();
            for _ in 0..n {
                words.insert(r.string()?);
            }
            Some(words)
        }
    };
    let analyzer = Analyzer {
        lowercase,
        stemmer,
        stopwords,
    };

    let n_docs = r.varint()? as usize;
    let mut doc_ids = Vec::with_capacity(n_docs.min(buf.len()));
    let mut doc_lens = Vec::with_capacity(n_docs.min(buf.len()));
    for _ in 0..n_docs {
        doc_ids.push(r.string()?);
        doc_lens.push(r.u32_varint()?);
    }

    let n_terms = r.varint()? as usize;
    let mut postings = HashMap::with_capacity(n_terms.min(buf.len()));
    for _ in 0..n_terms {
        let term = r.string()?;
        let df = r.varint()? as usize;
        let mut list = Vec::with_capacity(df.min(buf.len()));
        let mut doc = 0u32;
        for i in 0..df {
            let delta = r.u32_varint()?;
            if i > 0 && delta == 0 {
                return Err(r.err("postings not strictly increasing"));
            }
            doc = doc.checked_add(delta).ok_or_else(|| r.err("doc ordinal overflow"))?;
            if doc as usize >= n_docs {
                return Err(r.err("doc ordinal out of range"));
            }
            list.push(Posting {
                doc,
                tf: r.u32_varint()?,
            });
        }
        postings.insert(term, list);
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes"));
    }
    if doc_ids.is_empty() {
        return Err(Error::EmptyCollection);
    }
    Ok(Bm25Index::from_parts(params, analyzer, doc_ids, doc_lens, postings))
}

pub fn read_index(path: impl AsRef<Path>) -> Result<Bm25Index> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&buf)
}
