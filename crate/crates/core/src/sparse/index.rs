use std::collections::{HashMap, HashSet};

use super::Analyzer;
use crate::config::{BM25_B, BM25_K1};
use crate::corpus::Passage;
use crate::ranking::{to_scored_docs, TopK};
use crate::{Error, Result, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: BM25_K1, b: BM25_B }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Inverted index with the collection statistics BM25 needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    pub(crate) params: Bm25Params,
    pub(crate) analyzer: Analyzer,
    pub(crate) doc_ids: Vec<String>,
    pub(crate) doc_lens: Vec<u32>,
    pub(crate) avg_doc_len: f64,
    pub(crate) postings: HashMap<String, Vec<Posting>>,
    /// Position of each document's id in sorted id order, for tie-breaking by ordinal.
    pub(crate) id_order: Vec<u32>,
    /// Document ordinals in sorted id order (inverse of `id_order`).
    pub(crate) sorted_docs: Vec<u32>,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; positive for every `df <= N`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalized term-frequency component.
pub fn tf_weight(tf: u32, doc_len: u32, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let tf = tf as f64;
    let len_ratio = if avg_doc_len > 0.0 {
        doc_len as f64 / avg_doc_len
    } else {
        1.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * len_ratio))
}

pub fn build_index<I>(passages: I, analyzer: &Analyzer, params: Bm25Params) -> Result<Bm25Index>
where
    I: IntoIterator<Item = Passage>,
{
    try_build_index(passages.into_iter().map(Ok), analyzer, params)
}

/// Builds from a fallible passage stream such as [`crate::corpus::load_passages`].
pub fn try_build_index<I>(passages: I, analyzer: &Analyzer, params: Bm25Params) -> Result<Bm25Index>
where
    I: IntoIterator<Item = Result<Passage>>,
{
    let mut doc_ids = Vec::new();
    let mut doc_lens = Vec::new();
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut seen = HashSet::new();

    for passage in passages {
        let passage = passage?;
        if !seen.insert(passage.id.clone()) {
            return Err(Error::Duplicate {
                what: "passage id",
                key: passage.id,
            });
        }
        let doc = u32::try_from(doc_ids.len()).map_err(|_| Error::invalid("too many passages"))?;
        let tokens = analyzer.analyze(&passage.text);
        doc_lens.push(tokens.len() as u32);
        doc_ids.push(passage.id);

        let mut counts: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting { doc, tf });
        }
    }

    if doc_ids.is_empty() {
        return Err(Error::EmptyCollection);
    }
    Ok(Bm25Index::from_parts(params, analyzer.clone(), doc_ids, doc_lens, postings))
}

impl Bm25Index {
    pub(crate) fn from_parts(
        params: Bm25Params,
        analyzer: Analyzer,
        doc_ids: Vec<String>,
        doc_lens: Vec<u32>,
        postings: HashMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lens.len().max(1) as f64;
        let mut by_id: Vec<u32> = (0..doc_ids.len() as u32).collect();
        by_id.sort_by(|&a, &b| doc_ids[a as usize].cmp(&doc_ids[b as usize]));
        let mut id_order = vec![0u32; doc_ids.len()];
        for (pos, &doc) in by_id.iter().enumerate() {
            id_order[doc as usize] = pos as u32;
        }
        Self {
            params,
            analyzer,
            doc_ids,
            doc_lens,
            avg_doc_len,
            postings,
            id_order,
            sorted_docs: by_id,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_lens(&self) -> &[u32] {
        &self.doc_lens
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Postings for an already-analyzed term, sorted by document ordinal.
    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.doc_freq(term))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn accumulate(&self, query: &str) -> HashMap<u32, f64> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in self.analyzer.analyze(query) {
            let postings = self.postings(&term);
            if postings.is_empty() {
                continue;
            }
            let w = idf(self.doc_count(), postings.len());
            for p in postings {
                let s = w * tf_weight(p.tf, self.doc_lens[p.doc as usize], self.avg_doc_len, self.params);
                *acc.entry(p.doc).or_default() += s;
            }
        }
        acc
    }

    /// Score of one document, 0 when it shares no term with the query.
    pub fn score(&self, passage_id: &str, query: &str) -> Option<f64> {
        let doc = self.doc_ids.iter().position(|id| id == passage_id)? as u32;
        Some(self.accumulate(query).get(&doc).copied().unwrap_or(0.0))
    }

    /// Top `k` documents by (score desc, passage id asc); zero scores excluded.
    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredDoc> {
        let mut top = TopK::new(k);
        for (doc, score) in self.accumulate(query) {
            if score > 0.0 {
                top.push(score, self.id_order[doc as usize]);
            }
        }
        to_scored_docs(
            top.into_sorted()
                .into_iter()
                .map(|(score, pos)| (score, self.doc_ids[self.sorted_docs[pos as usize] as usize].clone())),
        )
    }
}

pub fn search(index: &Bm25Index, query: &str, k: usize) -> Vec<ScoredDoc> {
    index.search(query, k)
}
