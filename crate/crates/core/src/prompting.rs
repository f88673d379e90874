//! Rewriter and editor prompt assembly.
//!
//! Rendering is byte-stable: LF newlines, one blank line between blocks, no
//! trailing whitespace. A context renders as `[Q: ...\nA: ... ]` with one line
//! per question and answer; an empty context renders as `[]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::CONTEXT_CHAR_BUDGET;
use crate::corpus::{QaPair, RewriteTask};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Correctness,
    Clarity,
    Informativeness,
    Nonredundancy,
}

impl Property {
    pub const ALL: [Property; 4] = [
        Property::Correctness,
        Property::Clarity,
        Property::Informativeness,
        Property::Nonredundancy,
    ];

    /// The clause of the default rewriter instruction that carries this property.
    pub fn phrase(self) -> &'static str {
        match self {
            Property::Correctness => "retain its original meaning",
            Property::Clarity => "addressing coreference and omission issues",
            Property::Informativeness => "and be as informative as possible",
            Property::Nonredundancy => "should not duplicate any previously asked questions",
        }
    }

    // Shorter markers used to detect the property in composed text, since
    // e.g. the informativeness clause loses its leading "and" when it opens
    // the sentence.
    fn rewriter_marker(self) -> &'static str {
        match self {
            Property::Informativeness => "be as informative as possible",
            p => p.phrase(),
        }
    }

    fn editor_marker(self) -> &'static str {
        match self {
            Property::Correctness => "without changing the original meaning of the question",
            Property::Clarity => "fully addresses coreferences and omissions in the question",
            Property::Informativeness => "providing more information",
            Property::Nonredundancy => "should not duplicate any previously asked questions",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Property::Correctness => "correctness",
            Property::Clarity => "clarity",
            Property::Informativeness => "informativeness",
            Property::Nonredundancy => "nonredundancy",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown property {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Rewriter,
    Editor,
    /// Caller-supplied text; properties are detected by phrase.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub text: String,
    pub properties_present: BTreeSet<Property>,
}

fn compose_rewriter(props: &BTreeSet<Property>) -> String {
    let has = |p| props.contains(&p);
    let mut text = String::from("Given a question and its context, decontextualize the question");
    if has(Property::Clarity) {
        text.push_str(" by addressing coreference and omission issues");
    }
    text.push('.');

    let mut clause = String::new();
    if has(Property::Correctness) {
        clause.push_str("retain its original meaning");
    }
    if has(Property::Informativeness) {
        if !clause.is_empty() {
            clause.push_str(" and ");
        }
        clause.push_str("be as informative as possible");
    }
    if has(Property::Nonredundancy) {
        if !clause.is_empty() {
            clause.push_str(", and should ");
        }
        clause.push_str("not duplicate any previously asked questions in the context");
    }
    if !clause.is_empty() {
        text.push_str(" The resulting question should ");
        text.push_str(&clause);
        text.push('.');
    }
    text
}

fn compose_editor(props: &BTreeSet<Property>) -> String {
    let has = |p| props.contains(&p);
    let mut text = String::from(
        "Given a question and its context and a rewrite that decontextualizes the question, \
         edit the rewrite to create a revised version",
    );
    if has(Property::Clarity) {
        text.push_str(" that fully addresses coreferences and omissions in the question");
    }
    if has(Property::Correctness) {
        text.push_str(" without changing the original meaning of the question");
    }
    if has(Property::Informativeness) {
        text.push_str(if has(Property::Correctness) {
            " but providing more information"
        } else {
            " providing more information"
        });
    }
    text.push('.');
    if has(Property::Nonredundancy) {
        text.push_str(" The new rewrite should not duplicate any previously asked questions in the context.");
    }
    text.push_str(" If there is no need to edit the rewrite, return the rewrite as-is.");
    text
}

impl Instruction {
    /// The four-property rewriter instruction.
    pub fn rewriter() -> Self {
        Self::rewriter_with(Property::ALL.into_iter().collect())
    }

    pub fn rewriter_with(properties: BTreeSet<Property>) -> Self {
        Self {
            kind: InstructionKind::Rewriter,
            text: compose_rewriter(&properties),
            properties_present: properties,
        }
    }

    /// The four-property editor instruction.
    pub fn editor() -> Self {
        Self::editor_with(Property::ALL.into_iter().collect())
    }

    pub fn editor_with(properties: BTreeSet<Property>) -> Self {
        Self {
            kind: InstructionKind::Editor,
            text: compose_editor(&properties),
            properties_present: properties,
        }
    }

    pub fn custom(text: impl Into<String>) -> Self {
        let text = text.into();
        let properties_present = Property::ALL
            .into_iter()
            .filter(|p| text.contains(p.rewriter_marker()) || text.contains(p.editor_marker()))
            .collect();
        Self {
            kind: InstructionKind::Custom,
            text,
            properties_present,
        }
    }

    /// Whether the property set agrees with the phrases found in the text.
    pub fn is_consistent(&self) -> bool {
        Property::ALL.into_iter().all(|p| {
            let found = match self.kind {
                InstructionKind::Rewriter => self.text.contains(p.rewriter_marker()),
                InstructionKind::Editor => self.text.contains(p.editor_marker()),
                InstructionKind::Custom => {
                    self.text.contains(p.rewriter_marker()) || self.text.contains(p.editor_marker())
                }
            };
            found == self.properties_present.contains(&p)
        })
    }
}

/// Removes one property from an instruction. Idempotent.
pub fn ablate_instruction(instruction: &Instruction, drop: Property) -> Instruction {
    if !instruction.properties_present.contains(&drop) {
        return instruction.clone();
    }
    let mut props = instruction.properties_present.clone();
    props.remove(&drop);
    match instruction.kind {
        InstructionKind::Rewriter => Instruction::rewriter_with(props),
        InstructionKind::Editor => Instruction::editor_with(props),
        InstructionKind::Custom => {
            let mut text = instruction.text.clone();
            for marker in [drop.phrase(), drop.rewriter_marker(), drop.editor_marker()] {
                text = text.replace(marker, "");
            }
            let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
            let text = text.replace(" ,", ",").replace(" .", ".");
            Instruction {
                kind: InstructionKind::Custom,
                text,
                properties_present: props,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: Vec<QaPair>,
    pub question: String,
    /// Required in editor prompts.
    #[serde(default)]
    pub initial_rewrite: Option<String>,
    pub rewrite: String,
}

#[derive(Deserialize)]
struct DemonstrationFile {
    version: u32,
    demonstrations: Vec<Demonstration>,
}

const DEMONSTRATIONS_JSON: &str = include_str!("../data/demonstrations.json");

/// The fixed four-demonstration set, version 1.
pub fn default_demonstrations() -> Vec<Demonstration> {
    let file: DemonstrationFile =
        serde_json::from_str(DEMONSTRATIONS_JSON).expect("bundled demonstrations parse");
    debug_assert_eq!(file.version, 1);
    file.demonstrations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Oldest test-context pairs are dropped until the rendered context fits.
    pub context_char_budget: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            context_char_budget: Some(CONTEXT_CHAR_BUDGET),
        }
    }
}

pub fn render_context(context: &[QaPair]) -> String {
    if context.is_empty() {
        return "[]".to_string();
    }
    let body: Vec<String> = context
        .iter()
        .map(|p| format!("Q: {}\nA: {}", p.question.trim(), p.answer.trim()))
        .collect();
    format!("[{} ]", body.join("\n"))
}

fn fit_context<'a>(context: &'a [QaPair], opts: &RenderOptions) -> &'a [QaPair] {
    let Some(budget) = opts.context_char_budget else {
        return context;
    };
    let mut start = 0;
    while start < context.len() && render_context(&context[start..]).chars().count() > budget {
        start += 1;
    }
    &context[start..]
}

fn push_block(out: &mut String, context: &[QaPair], question: &str) {
    out.push_str("\n\nContext: ");
    out.push_str(&render_context(context));
    out.push_str("\nQuestion: ");
    out.push_str(question.trim());
}

pub fn render_rewriter_prompt(instruction: &Instruction, demos: &[Demonstration], task: &RewriteTask) -> String {
    render_rewriter_prompt_with(instruction, demos, task, &RenderOptions::default())
}

pub fn render_rewriter_prompt_with(
    instruction: &Instruction,
    demos: &[Demonstration],
    task: &RewriteTask,
    opts: &RenderOptions,
) -> String {
    let mut out = instruction.text.trim().to_string();
    for demo in demos {
        push_block(&mut out, &demo.context, &demo.question);
        out.push_str("\nRewrite: ");
        out.push_str(demo.rewrite.trim());
    }
    push_block(&mut out, fit_context(&task.context, opts), &task.question);
    out.push_str("\nRewrite:");
    out
}

pub fn render_editor_prompt(
    instruction: &Instruction,
    demos: &[Demonstration],
    task: &RewriteTask,
    initial: &str,
) -> Result<String> {
    render_editor_prompt_with(instruction, demos, task, initial, &RenderOptions::default())
}

pub fn render_editor_prompt_with(
    instruction: &Instruction,
    demos: &[Demonstration],
    task: &RewriteTask,
    initial: &str,
    opts: &RenderOptions,
) -> Result<String> {
    if initial.trim().is_empty() {
        return Err(Error::invalid("editor prompt needs a non-empty initial rewrite"));
    }
    let mut out = instruction.text.trim().to_string();
    for (i, demo) in demos.iter().enumerate() {
        let initial_demo = demo
            .initial_rewrite
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("demonstration {i} has no initial rewrite")))?;
        push_block(&mut out, &demo.context, &demo.question);
        out.push_str("\nRewrite: ");
        out.push_str(initial_demo.trim());
        out.push_str("\nEdit: ");
        out.push_str(demo.rewrite.trim());
    }
    push_block(&mut out, fit_context(&task.context, opts), &task.question);
    out.push_str("\nRewrite: ");
    out.push_str(initial.trim());
    out.push_str("\nEdit:");
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Rewriter,
    Editor,
}

/// A prompt together with everything it was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub role: PromptRole,
    pub instruction: Instruction,
    pub demonstrations: Vec<Demonstration>,
    pub task: RewriteTask,
    pub initial_rewrite: Option<String>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn rewriter(
        instruction: Instruction,
        demonstrations: Vec<Demonstration>,
        task: RewriteTask,
        opts: &RenderOptions,
    ) -> Self {
        let rendered = render_rewriter_prompt_with(&instruction, &demonstrations, &task, opts);
        Self {
            role: PromptRole::Rewriter,
            instruction,
            demonstrations,
            task,
            initial_rewrite: None,
            rendered,
        }
    }

    pub fn editor(
        instruction: Instruction,
        demonstrations: Vec<Demonstration>,
        task: RewriteTask,
        initial: String,
        opts: &RenderOptions,
    ) -> Result<Self> {
        let rendered = render_editor_prompt_with(&instruction, &demonstrations, &task, &initial, opts)?;
        Ok(Self {
            role: PromptRole::Editor,
            instruction,
            demonstrations,
            task,
            initial_rewrite: Some(initial),
            rendered,
        })
    }
}
