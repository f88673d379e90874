#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use inforewrite::corpus::{QaPair, RewriteTask, Source};

pub fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

pub fn read_fixture(path: &str) -> String {
    std::fs::read_to_string(fixture(path)).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub const GOLDEN_INITIAL: &str = "Who were the founding members of Wu-Tang Clan?";

/// The fixed test task rendered into the golden prompts.
pub fn golden_task() -> RewriteTask {
    RewriteTask {
        conversation_id: "1875".into(),
        turn_no: 3,
        context: vec![
            QaPair {
                question: "Where did Wu-Tang Clan's name come from?".into(),
                answer: "Shaolin and Wu Tang is a film that inspired the name of the hip-hop group Wu-Tang Clan.".into(),
            },
            QaPair {
                question: "When did the group form?".into(),
                answer: "Wu-Tang Clan is an American hip hop group formed in the New York City borough of Staten Island in 1992.".into(),
            },
        ],
        question: "Who were the founding members?".into(),
        human_rewrite: Some(GOLDEN_INITIAL.into()),
        gold_passage_ids: BTreeSet::new(),
        source: Source::Quac,
        unrewritten_first_turn: false,
    }
}

pub mod mini {
    use std::collections::HashMap;
    use std::sync::Arc;

    use inforewrite::corpus::{filter_evaluable, load_conversations, load_passages, preprocess_tasks, LoadOptions, PassageFields, RewriteTask};
    use inforewrite::eval::Qrels;
    use inforewrite::llm::MockTransport;
    use inforewrite::prompting::{default_demonstrations, render_editor_prompt, render_rewriter_prompt, Instruction};
    use inforewrite::sparse::{try_build_index, Analyzer, Bm25Index, Bm25Params};
    use serde::Deserialize;

    use super::{fixture, read_fixture};

    #[derive(Deserialize)]
    pub struct Scripted {
        pub rw_fsl: String,
        pub ed_self: String,
    }

    pub fn tasks() -> (Vec<RewriteTask>, Qrels) {
        let convs = load_conversations(fixture("mini/conversations.json"), &LoadOptions::default()).unwrap();
        let qrels = Qrels::read(fixture("mini/qrels.txt")).unwrap();
        let (tasks, _) = filter_evaluable(&preprocess_tasks(&convs), &qrels);
        (tasks, qrels)
    }

    pub fn index() -> Bm25Index {
        let passages = load_passages(fixture("mini/passages.jsonl"), &PassageFields::default()).unwrap();
        try_build_index(passages, &Analyzer::default(), Bm25Params::default()).unwrap()
    }

    pub fn scripted() -> HashMap<String, Scripted> {
        serde_json::from_str(&read_fixture("mini/scripted_rewrites.json")).unwrap()
    }

    /// Mock whose responses are keyed by the exact prompts the default rewriter renders.
    pub fn scripted_mock(tasks: &[RewriteTask]) -> Arc<MockTransport> {
        let script = scripted();
        let mock = MockTransport::new();
        let demos = default_demonstrations();
        for t in tasks {
            let s = &script[&t.qid()];
            mock.script_prompt(&render_rewriter_prompt(&Instruction::rewriter(), &demos, t), &s.rw_fsl);
            let editor = render_editor_prompt(&Instruction::editor(), &demos, t, &s.rw_fsl).unwrap();
            mock.script_prompt(&editor, &s.ed_self);
        }
        Arc::new(mock)
    }
}
