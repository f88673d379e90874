use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result, ScoredDoc};

/// Ranked results per query, as exchanged in six-column TREC run files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub tag: String,
    pub entries: BTreeMap<String, Vec<ScoredDoc>>,
}

fn check_ranking(qid: &str, docs: &[ScoredDoc]) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    for (i, d) in docs.iter().enumerate() {
        if d.rank != i + 1 {
            return Err(format!("query {qid}: expected rank {}, found {}", i + 1, d.rank));
        }
        if !d.score.is_finite() {
            return Err(format!("query {qid}: non-finite score for {}", d.passage_id));
        }
        if i > 0 && d.score > docs[i - 1].score {
            return Err(format!("query {qid}: score increases at rank {}", d.rank));
        }
        if !seen.insert(d.passage_id.as_str()) {
            return Err(format!("query {qid}: duplicate document {}", d.passage_id));
        }
    }
    Ok(())
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds one query's ranking, validating rank contiguity, score order and uniqueness.
    pub fn insert(&mut self, qid: impl Into<String>, docs: Vec<ScoredDoc>) -> Result<()> {
        let qid = qid.into();
        check_ranking(&qid, &docs).map_err(Error::Invalid)?;
        if self.entries.contains_key(&qid) {
            return Err(Error::Duplicate { what: "query", key: qid });
        }
        self.entries.insert(qid, docs);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (qid, docs) in &self.entries {
            check_ranking(qid, docs).map_err(Error::Invalid)?;
        }
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&[ScoredDoc]> {
        self.entries.get(qid).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `qid Q0 docid rank score tag` lines. Lines of one query must
    /// appear in rank order starting at 1.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut run = RunFile::default();
        let mut tag: Option<String> = None;
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let location = format!("{source}:{}", i + 1);
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 6 {
                return Err(Error::parse(location, format!("expected 6 columns, found {}", cols.len())));
            }
            let (qid, doc) = (cols[0].to_string(), cols[2].to_string());
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| Error::parse(&location, format!("bad rank {:?}", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(&location, format!("bad score {:?}", cols[4])))?;
            if !seen.insert((qid.clone(), doc.clone())) {
                return Err(Error::parse(location, format!("duplicate document {doc} for query {qid}")));
            }
            tag.get_or_insert_with(|| cols[5].to_string());
            let docs = run.entries.entry(qid.clone()).or_default();
            if rank != docs.len() + 1 {
                return Err(Error::parse(
                    location,
                    format!("query {qid}: expected rank {}, found {rank}", docs.len() + 1),
                ));
            }
            if docs.last().is_some_and(|prev| score > prev.score) {
                return Err(Error::parse(location, format!("query {qid}: score increases at rank {rank}")));
            }
            docs.push(ScoredDoc {
                passage_id: doc,
                score,
                rank,
            });
        }
        run.tag = tag.unwrap_or_default();
        Ok(run)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_trec_string(&self) -> String {
        let tag = if self.tag.is_empty() { "run" } else { self.tag.as_str() };
        let mut out = String::new();
        for (qid, docs) in &self.entries {
            for d in docs {
                let _ = writeln!(out, "{qid} Q0 {} {} {} {tag}", d.passage_id, d.rank, d.score);
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_trec_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_run(text: &str) -> Result<RunFile> {
    RunFile::parse(text, "run")
}

pub fn write_run(run: &RunFile) -> String {
    run.to_trec_string()
}

/// Graded relevance judgments; a document is relevant when its grade is at least 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

impl Qrels {
    pub fn insert(&mut self, qid: impl Into<String>, doc: impl Into<String>, grade: i32) -> Result<()> {
        if grade < 0 {
            return Err(Error::invalid(format!("negative relevance grade {grade}")));
        }
        self.judgments.entry(qid.into()).or_default().insert(doc.into(), grade);
        Ok(())
    }

    /// Binary qrels (grade 1) from per-query gold passage sets.
    pub fn from_gold<I, S>(gold: I) -> Self
    where
        I: IntoIterator<Item = (String, S)>,
        S: IntoIterator<Item = String>,
    {
        let mut judgments: BTreeMap<String, BTreeMap<String, i32>> = BTreeMap::new();
        for (qid, docs) in gold {
            let entry = judgments.entry(qid).or_default();
            for d in docs {
                entry.insert(d, 1);
            }
        }
        judgments.retain(|_, docs| !docs.is_empty());
        Self { judgments }
    }

    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(qid)
    }

    pub fn grade(&self, qid: &str, doc: &str) -> i32 {
        self.judgments
            .get(qid)
            .and_then(|d| d.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant(&self, qid: &str) -> BTreeSet<String> {
        self.judgments
            .get(qid)
            .map(|docs| {
                docs.iter()
                    .filter(|(_, &g)| g >= 1)
                    .map(|(d, _)| d.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn has_relevant(&self, qid: &str) -> bool {
        self.judgments
            .get(qid)
            .is_some_and(|docs| docs.values().any(|&g| g >= 1))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parses `qid iter docid grade` lines.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut qrels = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            let location = format!("{source}:{}", i + 1);
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(location, format!("expected 4 columns, found {}", cols.len())));
            }
            let grade: i32 = cols[3]
                .parse()
                .map_err(|_| Error::parse(&location, format!("bad grade {:?}", cols[3])))?;
            if grade < 0 {
                return Err(Error::parse(location, format!("negative grade {grade}")));
            }
            qrels.insert(cols[0], cols[2], grade)?;
        }
        Ok(qrels)
    }

    /// Parses `{qid: {docid: grade}}` or `{qid: [docid, ...]}` (grade 1).
    pub fn from_json(value: &Value, source: &str) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(source, "qrels JSON must be an object keyed by query id"))?;
        let mut qrels = Qrels::default();
        for (qid, docs) in obj {
            match docs {
                Value::Object(m) => {
                    for (doc, g) in m {
                        let grade = g
                            .as_i64()
                            .and_then(|g| i32::try_from(g).ok())
                            .filter(|&g| g >= 0)
                            .ok_or_else(|| Error::parse(source, format!("query {qid}: bad grade for {doc}")))?;
                        qrels.insert(qid.as_str(), doc.as_str(), grade)?;
                    }
                }
                Value::Array(items) => {
                    for d in items {
                        let doc = d
                            .as_str()
                            .ok_or_else(|| Error::parse(source, format!("query {qid}: non-string document id")))?;
                        qrels.insert(qid.as_str(), doc, 1)?;
                    }
                }
                _ => return Err(Error::parse(source, format!("query {qid}: expected object or array"))),
            }
        }
        Ok(qrels)
    }

    /// Reads TREC qrels, or JSON when the file extension is `.json`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        if path.extension().is_some_and(|e| e == "json") {
            let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(&source, e.to_string()))?;
            Self::from_json(&value, &source)
        } else {
            Self::parse(&text, &source)
        }
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.judgments {
            for (doc, grade) in docs {
                let _ = writeln!(out, "{qid} 0 {doc} {grade}");
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_trec_string()).map_err(|e| Error::io(path, e))
    }
}
