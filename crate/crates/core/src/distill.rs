//! Training-set export for a small student rewriter.
//!
//! Inputs encode the conversation as `<Que> q1 <Ans> a1 ... <Que> qt`;
//! targets are rewrites from a chosen label source.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{QaPair, RewriteTask};
use crate::rewriter::RewriteMap;
use crate::{jsonl, Error, Result};

pub const QUESTION_MARKER: &str = "<Que>";
pub const ANSWER_MARKER: &str = "<Ans>";

/// Markers and texts joined by single spaces; empty texts are omitted.
pub fn encode_input(context: &[QaPair], question: &str) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(context.len() * 4 + 2);
    for pair in context {
        parts.push(QUESTION_MARKER);
        if !pair.question.is_empty() {
            parts.push(&pair.question);
        }
        parts.push(ANSWER_MARKER);
        if !pair.answer.is_empty() {
            parts.push(&pair.answer);
        }
    }
    parts.push(QUESTION_MARKER);
    if !question.is_empty() {
        parts.push(question);
    }
    parts.join(" ")
}

/// Inverse of [`encode_input`] for texts that do not themselves contain a marker.
pub fn parse_input(input: &str) -> Result<(Vec<QaPair>, String)> {
    let bad = |msg: &str| Error::parse("distillation input", msg.to_string());
    if !input.starts_with(QUESTION_MARKER) {
        return Err(bad("input must start with <Que>"));
    }
    let mut segments: Vec<(&str, String)> = Vec::new();
    for word in input.split(' ') {
        if word == QUESTION_MARKER || word == ANSWER_MARKER {
            segments.push((word, String::new()));
        } else if let Some((_, text)) = segments.last_mut() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(word);
        }
    }
    let (last_marker, question) = segments.pop().ok_or_else(|| bad("empty input"))?;
    if last_marker != QUESTION_MARKER {
        return Err(bad("input must end with a <Que> segment"));
    }
    if !segments.len().is_multiple_of(2) {
        return Err(bad("unbalanced <Que>/<Ans> segments"));
    }
    let mut context = Vec::with_capacity(segments.len() / 2);
    for pair in segments.chunks_exact(2) {
        if pair[0].0 != QUESTION_MARKER || pair[1].0 != ANSWER_MARKER {
            return Err(bad("context segments must alternate <Que> then <Ans>"));
        }
        context.push(QaPair {
            question: pair[0].1.clone(),
            answer: pair[1].1.clone(),
        });
    }
    Ok((context, question))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    RwFsl,
    EdSelf,
    Human,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::RwFsl => "rw_fsl",
            LabelSource::EdSelf => "ed_self",
            LabelSource::Human => "human",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rw_fsl" => Ok(LabelSource::RwFsl),
            "ed_self" => Ok(LabelSource::EdSelf),
            "human" => Ok(LabelSource::Human),
            _ => Err(Error::invalid(format!("unknown label source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub conversation_id: String,
    pub turn_no: u32,
    pub label_source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillExample {
    pub input: String,
    pub target: String,
    pub meta: ExampleMeta,
}

fn draw<'a>(pool: &[&'a RewriteTask], n: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<&'a RewriteTask>> {
    if n > pool.len() {
        return Err(Error::invalid(format!(
            "{what} size {n} exceeds the {} available questions",
            pool.len()
        )));
    }
    let mut picked = sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

fn to_examples(tasks: &[&RewriteTask], labels: &RewriteMap, source: LabelSource) -> Result<Vec<DistillExample>> {
    let missing: Vec<String> = tasks
        .iter()
        .filter(|t| labels.get(&t.conversation_id, t.turn_no).is_none_or(|l| l.trim().is_empty()))
        .map(|t| t.qid())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(tasks
        .iter()
        .map(|t| DistillExample {
            input: encode_input(&t.context, &t.question),
            target: labels
                .get(&t.conversation_id, t.turn_no)
                .expect("checked above")
                .to_string(),
            meta: ExampleMeta {
                conversation_id: t.conversation_id.clone(),
                turn_no: t.turn_no,
                label_source: source,
            },
        })
        .collect())
}

/// Samples `n_train` questions from `train_tasks` and `n_dev` from
/// `dev_tasks` uniformly without replacement, then pairs each with its label.
/// Dev candidates that also appear in the train sample are never drawn.
/// Both outputs keep their pool's order.
pub fn export_training_set(
    train_tasks: &[RewriteTask],
    dev_tasks: &[RewriteTask],
    labels: &RewriteMap,
    source: LabelSource,
    n_train: usize,
    n_dev: usize,
    seed: u64,
) -> Result<(Vec<DistillExample>, Vec<DistillExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_pool: Vec<&RewriteTask> = train_tasks.iter().collect();
    let train = draw(&train_pool, n_train, &mut rng, "training set")?;
    let taken: HashSet<(&str, u32)> = train.iter().map(|t| (t.conversation_id.as_str(), t.turn_no)).collect();
    let dev_pool: Vec<&RewriteTask> = dev_tasks
        .iter()
        .filter(|t| !taken.contains(&(t.conversation_id.as_str(), t.turn_no)))
        .collect();
    let dev = draw(&dev_pool, n_dev, &mut rng, "dev set")?;
    Ok((to_examples(&train, labels, source)?, to_examples(&dev, labels, source)?))
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[DistillExample]) -> Result<()> {
    jsonl::write(path, examples)
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<DistillExample>> {
    jsonl::read(path)
}
