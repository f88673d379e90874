//! Dataset ingestion and task preparation.
//!
//! Conversation files are JSON arrays (or JSON lines) of flat turn records.
//! Field names are configurable through [`SchemaMap`]; the default matches the
//! public QReCC release.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eval::Qrels;
use crate::{jsonl, Error, Result};

/// Origin dataset of a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "QuAC")]
    Quac,
    #[serde(rename = "NQ")]
    Nq,
    #[serde(rename = "TREC")]
    Trec,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Quac, Source::Nq, Source::Trec];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Quac => "QuAC",
            Source::Nq => "NQ",
            Source::Trec => "TREC",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = norm.trim_end_matches("-conv").trim_end_matches("_conv");
        match norm {
            "quac" => Ok(Source::Quac),
            "nq" | "natural questions" | "natural_questions" => Ok(Source::Nq),
            "trec" | "cast" | "trec-cast" | "trec_cast" => Ok(Source::Trec),
            _ => Err(Error::invalid(format!("unknown conversation source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// A dialog whose turns alternate user, system, user, ...
///
/// Per-user-turn side data (`human_rewrites`, `gold_passages`) is indexed by
/// user-turn position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub source: Source,
    pub turns: Vec<Turn>,
    pub human_rewrites: Vec<Option<String>>,
    #[serde(default)]
    pub gold_passages: Vec<BTreeSet<String>>,
}

impl Conversation {
    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    /// (question, answer) pairs in order. A trailing unanswered question pairs with "".
    pub fn exchanges(&self) -> Vec<QaPair> {
        let mut out = Vec::new();
        let mut it = self.turns.iter().peekable();
        while let Some(turn) = it.next() {
            if turn.role != Role::User {
                continue;
            }
            let answer = match it.peek() {
                Some(t) if t.role == Role::System => it.next().map(|t| t.text.clone()),
                _ => None,
            };
            out.push(QaPair {
                question: turn.text.clone(),
                answer: answer.unwrap_or_default(),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteTask {
    pub conversation_id: String,
    pub turn_no: u32,
    pub context: Vec<QaPair>,
    pub question: String,
    pub human_rewrite: Option<String>,
    pub gold_passage_ids: BTreeSet<String>,
    pub source: Source,
    /// Set on a first turn that had no human rewrite to substitute.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unrewritten_first_turn: bool,
}

impl RewriteTask {
    /// Query id in the `<conversation>_<turn>` form used by run and qrels files.
    pub fn qid(&self) -> String {
        qid(&self.conversation_id, self.turn_no)
    }
}

pub fn qid(conversation_id: &str, turn_no: u32) -> String {
    format!("{conversation_id}_{turn_no}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Maps logical record fields to the names used by a particular dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaMap {
    pub conversation_id: String,
    pub turn_no: String,
    pub question: String,
    pub rewrite: String,
    pub answer: String,
    pub source: String,
    pub gold_passages: String,
}

impl Default for SchemaMap {
    fn default() -> Self {
        Self {
            conversation_id: "Conversation_no".into(),
            turn_no: "Turn_no".into(),
            question: "Question".into(),
            rewrite: "Rewrite".into(),
            answer: "Answer".into(),
            source: "Conversation_source".into(),
            gold_passages: "Truth_passages".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema: SchemaMap,
    /// Used for records whose source field is absent.
    pub source_override: Option<Source>,
}

struct TurnRecord {
    turn_no: u32,
    question: String,
    rewrite: Option<String>,
    answer: String,
    source: Source,
    gold: BTreeSet<String>,
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn optional_text(v: Option<&Value>) -> Option<String> {
    match v {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        _ => None,
    }
}

fn parse_record(index: usize, v: &Value, opts: &LoadOptions) -> Result<(String, TurnRecord)> {
    let schema = &opts.schema;
    let missing = |field: &str| Error::Schema {
        index,
        field: field.to_string(),
    };
    let obj = v.as_object().ok_or_else(|| missing("<object>"))?;

    let conv_id = obj
        .get(&schema.conversation_id)
        .and_then(scalar_string)
        .ok_or_else(|| missing(&schema.conversation_id))?;
    let turn_no = obj
        .get(&schema.turn_no)
        .and_then(|t| match t {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .filter(|&n| n >= 1)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| missing(&schema.turn_no))?;
    let question = obj
        .get(&schema.question)
        .and_then(Value::as_str)
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| missing(&schema.question))?
        .to_string();
    let rewrite = optional_text(obj.get(&schema.rewrite));
    let answer = match obj.get(&schema.answer) {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(missing(&schema.answer)),
    };
    let source = match obj.get(&schema.source).and_then(Value::as_str) {
        Some(s) => s.parse().map_err(|_| missing(&schema.source))?,
        None => opts.source_override.ok_or_else(|| missing(&schema.source))?,
    };
    let gold = match obj.get(&schema.gold_passages) {
        None | Some(Value::Null) => BTreeSet::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| scalar_string(x).ok_or_else(|| missing(&schema.gold_passages)))
            .collect::<Result<_>>()?,
        Some(x) => scalar_string(x)
            .map(|s| BTreeSet::from([s]))
            .ok_or_else(|| missing(&schema.gold_passages))?,
    };

    Ok((
        conv_id,
        TurnRecord {
            turn_no,
            question,
            rewrite,
            answer,
            source,
            gold,
        },
    ))
}

fn read_records(path: &Path) -> Result<Vec<Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}

/// Loads turn records and groups them into conversations, in order of first appearance.
pub fn load_conversations(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<Conversation>> {
    let records = read_records(path.as_ref())?;
    conversations_from_records(&records, opts)
}

pub fn conversations_from_records(records: &[Value], opts: &LoadOptions) -> Result<Vec<Conversation>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, BTreeMap<u32, TurnRecord>> = HashMap::new();

    for (index, v) in records.iter().enumerate() {
        let (conv_id, rec) = parse_record(index, v, opts)?;
        let turns = grouped.entry(conv_id.clone()).or_insert_with(|| {
            order.push(conv_id.clone());
            BTreeMap::new()
        });
        let turn_no = rec.turn_no;
        if turns.insert(turn_no, rec).is_some() {
            return Err(Error::Duplicate {
                what: "(conversation, turn)",
                key: qid(&conv_id, turn_no),
            });
        }
    }

    order
        .into_iter()
        .map(|id| {
            let records = grouped.remove(&id).expect("grouped by id");
            for (expected, &turn_no) in (1u32..).zip(records.keys()) {
                if turn_no != expected {
                    return Err(Error::invalid(format!(
                        "conversation {id}: turn numbers are not contiguous from 1 (found {turn_no}, expected {expected})"
                    )));
                }
            }
            let source = records.values().next().map(|r| r.source).expect("non-empty group");
            let mut conv = Conversation {
                id,
                source,
                turns: Vec::with_capacity(records.len() * 2),
                human_rewrites: Vec::with_capacity(records.len()),
                gold_passages: Vec::with_capacity(records.len()),
            };
            for rec in records.into_values() {
                conv.turns.push(Turn {
                    role: Role::User,
                    text: rec.question,
                });
                conv.turns.push(Turn {
                    role: Role::System,
                    text: rec.answer,
                });
                conv.human_rewrites.push(rec.rewrite);
                conv.gold_passages.push(rec.gold);
            }
            Ok(conv)
        })
        .collect()
}

/// One task per user turn. The first question is replaced by its human
/// rewrite when one exists, and the replaced text is what later turns see as
/// context.
pub fn preprocess_tasks(conversations: &[Conversation]) -> Vec<RewriteTask> {
    let mut tasks = Vec::new();
    for conv in conversations {
        let mut exchanges = conv.exchanges();
        let mut unrewritten = false;
        if let Some(first) = exchanges.first_mut() {
            match conv.human_rewrites.first().cloned().flatten() {
                Some(rewrite) => first.question = rewrite,
                None => unrewritten = true,
            }
        }
        for (i, exchange) in exchanges.iter().enumerate() {
            tasks.push(RewriteTask {
                conversation_id: conv.id.clone(),
                turn_no: (i + 1) as u32,
                context: exchanges[..i].to_vec(),
                question: exchange.question.clone(),
                human_rewrite: conv.human_rewrites.get(i).cloned().flatten(),
                gold_passage_ids: conv.gold_passages.get(i).cloned().unwrap_or_default(),
                source: conv.source,
                unrewritten_first_turn: i == 0 && unrewritten,
            });
        }
    }
    tasks
}

/// Per-subset task counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub total: usize,
    pub by_source: BTreeMap<Source, usize>,
}

impl SubsetCounts {
    pub fn of(tasks: &[RewriteTask]) -> Self {
        let mut counts = SubsetCounts::default();
        for t in tasks {
            counts.total += 1;
            *counts.by_source.entry(t.source).or_default() += 1;
        }
        counts
    }

    pub fn get(&self, source: Source) -> usize {
        self.by_source.get(&source).copied().unwrap_or(0)
    }
}

/// Keeps tasks with at least one judged-relevant passage, in order.
/// Retained tasks take their gold passage ids from the qrels.
pub fn filter_evaluable(tasks: &[RewriteTask], qrels: &Qrels) -> (Vec<RewriteTask>, SubsetCounts) {
    let kept: Vec<RewriteTask> = tasks
        .iter()
        .filter_map(|t| {
            let relevant = qrels.relevant(&t.qid());
            if relevant.is_empty() {
                return None;
            }
            let mut t = t.clone();
            t.gold_passage_ids = relevant;
            Some(t)
        })
        .collect();
    let counts = SubsetCounts::of(&kept);
    (kept, counts)
}

/// Field names for passage collection lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageFields {
    pub id: String,
    pub text: String,
}

impl Default for PassageFields {
    fn default() -> Self {
        Self {
            id: "id".into(),
            text: "contents".into(),
        }
    }
}

/// Streams passages from a JSON-lines collection in file order.
pub struct PassageReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    fields: PassageFields,
    seen: HashSet<String>,
}

impl Iterator for PassageReader {
    type Item = Result<Passage>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

impl PassageReader {
    fn parse_line(&mut self, line: &str) -> Result<Passage> {
        let location = format!("{}: line {}", self.path.display(), self.line_no);
        let v: Value =
            serde_json::from_str(line).map_err(|e| Error::parse(&location, e.to_string()))?;
        let id = v
            .get(&self.fields.id)
            .and_then(scalar_string)
            .ok_or_else(|| Error::parse(&location, format!("missing field `{}`", self.fields.id)))?;
        let text = v
            .get(&self.fields.text)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(&location, format!("missing field `{}`", self.fields.text)))?
            .to_string();
        if !self.seen.insert(id.clone()) {
            return Err(Error::parse(&location, format!("duplicate passage id {id:?}")));
        }
        Ok(Passage { id, text })
    }
}

pub fn load_passages(path: impl AsRef<Path>, fields: &PassageFields) -> Result<PassageReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(PassageReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        fields: fields.clone(),
        seen: HashSet::new(),
    })
}

/// Samples `n` conversations as a dev split. Both halves keep input order.
pub fn split_dev(
    conversations: &[Conversation],
    n: usize,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>)> {
    if n > conversations.len() {
        return Err(Error::invalid(format!(
            "dev split of {n} requested from {} conversations",
            conversations.len()
        )));
    }
    let mut indices: Vec<usize> = (0..conversations.len()).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev_set: HashSet<usize> = indices[..n].iter().copied().collect();
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, c) in conversations.iter().enumerate() {
        if dev_set.contains(&i) {
            dev.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    Ok((train, dev))
}

pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<RewriteTask>> {
    jsonl::read(path)
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &[RewriteTask]) -> Result<()> {
    jsonl::write(path, tasks)
}

/// Query id to subset, for per-subset metric aggregation.
pub fn subset_map(tasks: &[RewriteTask]) -> HashMap<String, Source> {
    tasks.iter().map(|t| (t.qid(), t.source)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(conv: u64, turn: u64, q: &str, rw: &str, a: &str) -> Value {
        json!({
            "Conversation_no": conv, "Turn_no": turn, "Question": q,
            "Rewrite": rw, "Answer": a, "Conversation_source": "quac"
        })
    }

    #[test]
    fn groups_and_orders_turns() {
        let records = vec![
            rec(7, 2, "Q2", "R2", "A2"),
            rec(3, 1, "X1", "Y1", "B1"),
            rec(7, 1, "Q1", "R1", "A1"),
        ];
        let convs = conversations_from_records(&records, &LoadOptions::default()).unwrap();
        assert_eq!(convs.len(), 2);
        assert_eq!(convs[0].id, "7");
        assert_eq!(convs[0].turns[0].text, "Q1");
        assert_eq!(convs[0].turns[2].text, "Q2");
        assert_eq!(convs[0].human_rewrites, vec![Some("R1".into()), Some("R2".into())]);
        assert_eq!(convs[1].source, Source::Quac);
    }

    #[test]
    fn missing_question_names_record_index() {
        let mut bad = rec(1, 2, "Q", "R", "A");
        bad.as_object_mut().unwrap().remove("Question");
        let err = conversations_from_records(&[rec(1, 1, "Q", "R", "A"), bad], &LoadOptions::default())
            .unwrap_err();
        match err {
            Error::Schema { index, field } => {
                assert_eq!(index, 1);
                assert_eq!(field, "Question");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_turn_rejected() {
        let err = conversations_from_records(
            &[rec(1, 1, "Q", "R", "A"), rec(1, 1, "Q", "R", "A")],
            &LoadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Duplicate { .. }), "{err}");
    }

    #[test]
    fn source_override_applies_when_field_absent() {
        let mut r = rec(1, 1, "Q", "R", "A");
        r.as_object_mut().unwrap().remove("Conversation_source");
        assert!(conversations_from_records(&[r.clone()], &LoadOptions::default()).is_err());
        let opts = LoadOptions {
            source_override: Some(Source::Trec),
            ..Default::default()
        };
        let convs = conversations_from_records(&[r], &opts).unwrap();
        assert_eq!(convs[0].source, Source::Trec);
    }

    #[test]
    fn first_question_replaced_by_human_rewrite() {
        let records = vec![rec(1, 1, "Q", "R", "A1"), rec(1, 2, "Q2", "R2", "A2")];
        let convs = conversations_from_records(&records, &LoadOptions::default()).unwrap();
        let tasks = preprocess_tasks(&convs);
        assert_eq!(tasks[0].question, "R");
        assert!(tasks[0].context.is_empty());
        assert_eq!(tasks[1].question, "Q2");
        assert_eq!(
            tasks[1].context,
            vec![QaPair {
                question: "R".into(),
                answer: "A1".into()
            }]
        );
    }

    #[test]
    fn first_turn_without_rewrite_is_flagged() {
        let records = vec![rec(1, 1, "Q", "", "A1")];
        let convs = conversations_from_records(&records, &LoadOptions::default()).unwrap();
        let tasks = preprocess_tasks(&convs);
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].question, "Q");
        assert!(tasks[0].unrewritten_first_turn);
        assert!(tasks[0].context.is_empty());
    }

    #[test]
    fn third_task_sees_two_pairs_in_order() {
        let records = vec![
            rec(1, 1, "Q1", "R1", "A1"),
            rec(1, 2, "Q2", "R2", "A2"),
            rec(1, 3, "Q3", "R3", "A3"),
        ];
        let convs = conversations_from_records(&records, &LoadOptions::default()).unwrap();
        let tasks = preprocess_tasks(&convs);
        assert_eq!(tasks.len(), 3);
        let ctx: Vec<_> = tasks[2].context.iter().map(|p| p.question.as_str()).collect();
        assert_eq!(ctx, vec!["R1", "Q2"]);
        assert_eq!(tasks[2].turn_no, 3);
    }

    #[test]
    fn split_dev_zero_and_too_large() {
        let records: Vec<Value> = (1..=5).map(|c| rec(c, 1, "Q", "R", "A")).collect();
        let convs = conversations_from_records(&records, &LoadOptions::default()).unwrap();
        let (train, dev) = split_dev(&convs, 0, 42).unwrap();
        assert_eq!(train, convs);
        assert!(dev.is_empty());
        assert!(split_dev(&convs, 6, 42).is_err());
    }

    #[test]
    fn source_names_parse() {
        assert_eq!("quac".parse::<Source>().unwrap(), Source::Quac);
        assert_eq!("NQ-Conv".parse::<Source>().unwrap(), Source::Nq);
        assert_eq!("trec".parse::<Source>().unwrap(), Source::Trec);
        assert!("msmarco".parse::<Source>().is_err());
    }
}
