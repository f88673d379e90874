//! Rewrite methods and LLM output sanitization.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{qid, RewriteTask};
use crate::llm::{prompt_hash, LlmClient};
use crate::prompting::{
    default_demonstrations, render_editor_prompt_with, render_rewriter_prompt_with, Demonstration,
    Instruction, RenderOptions,
};
use crate::{jsonl, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    Human,
    RwZsl,
    RwFsl,
    EdSelf,
    EdFile,
    /// Rewrites produced outside this crate, e.g. by a fine-tuned student model.
    Student,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Human => "human",
            Method::RwZsl => "rw_zsl",
            Method::RwFsl => "rw_fsl",
            Method::EdSelf => "ed_self",
            Method::EdFile => "ed_file",
            Method::Student => "student",
        }
    }

    pub fn is_editor(self) -> bool {
        matches!(self, Method::EdSelf | Method::EdFile)
    }

    pub fn uses_llm(self) -> bool {
        matches!(self, Method::RwZsl | Method::RwFsl | Method::EdSelf | Method::EdFile)
    }

    /// Display label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Original => "Original",
            Method::Human => "Human",
            Method::RwZsl => "RW(ZSL)",
            Method::RwFsl => "RW(FSL)",
            Method::EdSelf => "ED(Self)",
            Method::EdFile => "ED(File)",
            Method::Student => "Student",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        [
            Method::Original,
            Method::Human,
            Method::RwZsl,
            Method::RwFsl,
            Method::EdSelf,
            Method::EdFile,
            Method::Student,
        ]
        .into_iter()
        .find(|m| m.as_str() == norm)
        .ok_or_else(|| Error::invalid(format!("unknown rewrite method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    /// The LLM call failed; the rewrite is the original question.
    LlmFailed,
    /// Human method on a task without a human rewrite; the rewrite is the question.
    MissingHumanRewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub conversation_id: String,
    pub turn_no: u32,
    pub method: Method,
    pub rewrite: String,
    #[serde(default)]
    pub initial_rewrite: Option<String>,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<RecordFlag>,
}

impl RewriteRecord {
    pub fn qid(&self) -> String {
        qid(&self.conversation_id, self.turn_no)
    }

    /// Whether `latency_ms` reflects a real model call.
    pub fn is_timed(&self) -> bool {
        !self.cached
            && self.flag.is_none()
            && (self.method.uses_llm() || (self.method == Method::Student && self.latency_ms > 0.0))
    }
}

pub fn read_rewrites(path: impl AsRef<Path>) -> Result<Vec<RewriteRecord>> {
    let records: Vec<RewriteRecord> = jsonl::read(path)?;
    for r in &records {
        if r.rewrite.trim().is_empty() {
            return Err(Error::invalid(format!("{}: empty rewrite", r.qid())));
        }
    }
    Ok(records)
}

pub fn write_rewrites(path: impl AsRef<Path>, records: &[RewriteRecord]) -> Result<()> {
    jsonl::write(path, records)
}

/// Rewrites keyed by (conversation id, turn number).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewriteMap(HashMap<(String, u32), String>);

impl RewriteMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: &[RewriteRecord]) -> Self {
        Self(
            records
                .iter()
                .map(|r| ((r.conversation_id.clone(), r.turn_no), r.rewrite.clone()))
                .collect(),
        )
    }

    /// Human rewrites of the tasks that have one.
    pub fn human(tasks: &[RewriteTask]) -> Self {
        Self(
            tasks
                .iter()
                .filter_map(|t| {
                    t.human_rewrite
                        .as_ref()
                        .map(|h| ((t.conversation_id.clone(), t.turn_no), h.clone()))
                })
                .collect(),
        )
    }

    pub fn insert(&mut self, conversation_id: &str, turn_no: u32, rewrite: impl Into<String>) {
        self.0.insert((conversation_id.to_string(), turn_no), rewrite.into());
    }

    pub fn get(&self, conversation_id: &str, turn_no: u32) -> Option<&str> {
        self.0
            .get(&(conversation_id.to_string(), turn_no))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Version of the preamble pattern list below.
pub const PREAMBLE_PATTERNS_VERSION: u32 = 1;

const PREAMBLE_PREFIXES: &[&str] = &[
    "sure",
    "certainly",
    "of course",
    "here is",
    "here's",
    "okay",
    "ok,",
    "ok!",
    "i hope",
    "note:",
    "as an ai",
];

const LABELS: &[&str] = &[
    "rewrite:",
    "edit:",
    "rewritten question:",
    "rewritten query:",
    "revised rewrite:",
    "edited rewrite:",
    "new rewrite:",
];

const QUOTES: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')];

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        for label in LABELS {
            if let Some(rest) = strip_prefix_ci(s, label) {
                s = rest.trim();
            }
        }
        for &(open, close) in QUOTES {
            if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            }
        }
        if s == before {
            return s;
        }
    }
}

fn is_preamble(line: &str) -> bool {
    if line.ends_with(':') {
        return true;
    }
    let lower = line.to_lowercase();
    PREAMBLE_PREFIXES.iter().any(|p| {
        lower.starts_with(p)
            && lower[p.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Reduces a raw completion to one standalone query line.
///
/// Takes the first non-empty line that is not a known preamble once labels and
/// surrounding quotes are stripped, falling back to the first non-empty line.
pub fn sanitize_output(raw: &str) -> Result<String> {
    let lines: Vec<&str> = raw.lines().map(clean_line).filter(|l| !l.is_empty()).collect();
    lines
        .iter()
        .find(|l| !is_preamble(l))
        .or_else(|| lines.first())
        .map(|l| l.to_string())
        .ok_or_else(|| Error::UnusableCompletion(raw.to_string()))
}

/// Outcome of one [`Rewriter::generate_rewrites`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteRun {
    pub records: Vec<RewriteRecord>,
    pub failed: usize,
}

pub struct Rewriter<'a> {
    client: Option<&'a LlmClient>,
    pub rewriter_instruction: Instruction,
    pub editor_instruction: Instruction,
    pub demonstrations: Vec<Demonstration>,
    pub render: RenderOptions,
    pub workers: usize,
}

impl<'a> Rewriter<'a> {
    pub fn new(client: Option<&'a LlmClient>) -> Self {
        Self {
            client,
            rewriter_instruction: Instruction::rewriter(),
            editor_instruction: Instruction::editor(),
            demonstrations: default_demonstrations(),
            render: RenderOptions::default(),
            workers: 4,
        }
    }

    /// One record per task, in task order.
    ///
    /// `ed_self` uses `initials` when given and otherwise produces them with
    /// `rw_fsl` first; `ed_file` requires `initials`.
    pub fn generate_rewrites(
        &self,
        method: Method,
        tasks: &[RewriteTask],
        initials: Option<&RewriteMap>,
    ) -> Result<RewriteRun> {
        match method {
            Method::Original => Ok(RewriteRun {
                records: tasks.iter().map(|t| plain(t, method, t.question.clone(), None)).collect(),
                failed: 0,
            }),
            Method::Human => Ok(RewriteRun {
                records: tasks
                    .iter()
                    .map(|t| match &t.human_rewrite {
                        Some(h) => plain(t, method, h.clone(), None),
                        None => plain(t, method, t.question.clone(), Some(RecordFlag::MissingHumanRewrite)),
                    })
                    .collect(),
                failed: 0,
            }),
            Method::RwZsl | Method::RwFsl => {
                let client = self.require_client(method)?;
                let demos: &[Demonstration] = if method == Method::RwFsl {
                    &self.demonstrations
                } else {
                    &[]
                };
                Ok(self.run_llm(client, tasks, method, |t| {
                    Ok((
                        render_rewriter_prompt_with(&self.rewriter_instruction, demos, t, &self.render),
                        None,
                    ))
                }))
            }
            Method::EdSelf | Method::EdFile => {
                let client = self.require_client(method)?;
                let produced;
                let initials = match (initials, method) {
                    (Some(map), _) => map,
                    (None, Method::EdSelf) => {
                        let first = self.generate_rewrites(Method::RwFsl, tasks, None)?;
                        produced = RewriteMap::from_records(&first.records);
                        &produced
                    }
                    _ => return Err(Error::invalid("ed_file needs an initial rewrite file")),
                };
                let missing: Vec<String> = tasks
                    .iter()
                    .filter(|t| initials.get(&t.conversation_id, t.turn_no).is_none())
                    .map(RewriteTask::qid)
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::invalid(format!(
                        "no initial rewrite for {} task(s): {}",
                        missing.len(),
                        missing.join(", ")
                    )));
                }
                Ok(self.run_llm(client, tasks, method, |t| {
                    let initial = initials
                        .get(&t.conversation_id, t.turn_no)
                        .expect("checked above")
                        .to_string();
                    let prompt = render_editor_prompt_with(
                        &self.editor_instruction,
                        &self.demonstrations,
                        t,
                        &initial,
                        &self.render,
                    )?;
                    Ok((prompt, Some(initial)))
                }))
            }
            Method::Student => Err(Error::invalid(
                "student rewrites are produced by an external model; load them from a rewrite file",
            )),
        }
    }

    fn require_client(&self, method: Method) -> Result<&'a LlmClient> {
        self.client
            .ok_or_else(|| Error::invalid(format!("method {method} needs an LLM client")))
    }

    fn run_llm<F>(&self, client: &LlmClient, tasks: &[RewriteTask], method: Method, build: F) -> RewriteRun
    where
        F: Fn(&RewriteTask) -> Result<(String, Option<String>)> + Sync,
    {
        let next = AtomicUsize::new(0);
        let failed = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<RewriteRecord>>> = Mutex::new(vec![None; tasks.len()]);
        let workers = self.workers.clamp(1, tasks.len().max(1));

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = tasks.get(i) else { break };
                    let record = match self.rewrite_one(client, task, method, &build) {
                        Ok(r) => r,
                        Err((e, hash, initial)) => {
                            tracing::warn!(qid = %task.qid(), error = %e, "rewrite failed; keeping the original question");
                            failed.fetch_add(1, Ordering::SeqCst);
                            RewriteRecord {
                                prompt_hash: hash,
                                initial_rewrite: initial,
                                flag: Some(RecordFlag::LlmFailed),
                                ..plain(task, method, task.question.clone(), None)
                            }
                        }
                    };
                    slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(record);
                });
            }
        });

        RewriteRun {
            records: slots
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .into_iter()
                .map(|r| r.expect("every task processed"))
                .collect(),
            failed: failed.into_inner(),
        }
    }

    #[allow(clippy::type_complexity)]
    fn rewrite_one<F>(
        &self,
        client: &LlmClient,
        task: &RewriteTask,
        method: Method,
        build: &F,
    ) -> std::result::Result<RewriteRecord, (Error, Option<String>, Option<String>)>
    where
        F: Fn(&RewriteTask) -> Result<(String, Option<String>)>,
    {
        let (prompt, initial) = build(task).map_err(|e| (e, None, None))?;
        let hash = prompt_hash(&prompt);
        let fail = |e: Error| (e, Some(hash.clone()), initial.clone());
        let response = client.complete(&client.request(prompt)).map_err(|e| fail(e.into()))?;
        let rewrite = sanitize_output(&response.text).map_err(fail)?;
        Ok(RewriteRecord {
            conversation_id: task.conversation_id.clone(),
            turn_no: task.turn_no,
            method,
            rewrite,
            initial_rewrite: initial.clone(),
            latency_ms: response.latency_ms,
            prompt_hash: Some(hash.clone()),
            cached: response.cached,
            flag: None,
        })
    }
}

fn plain(task: &RewriteTask, method: Method, rewrite: String, flag: Option<RecordFlag>) -> RewriteRecord {
    RewriteRecord {
        conversation_id: task.conversation_id.clone(),
        turn_no: task.turn_no,
        method,
        rewrite,
        initial_rewrite: None,
        latency_ms: 0.0,
        prompt_hash: None,
        cached: false,
        flag,
    }
}
