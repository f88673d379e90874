use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inforewrite::corpus::read_tasks;
use inforewrite::eval::{MetricReport, RunFile};
use inforewrite::llm::prompt_hash;
use inforewrite::prompting::{default_demonstrations, render_editor_prompt, render_rewriter_prompt, Instruction};
use inforewrite::rewriter::{read_rewrites, Method};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inforewrite"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> Value {
    let m = PathBuf::from(format!("{}.manifest.json", path.display()));
    serde_json::from_str(&std::fs::read_to_string(m).unwrap()).unwrap()
}

/// Tasks from the mini dataset, filtered by its qrels.
fn prepare(dir: &Path) -> PathBuf {
    let tasks = dir.join("tasks.jsonl");
    ok(&[
        "prepare",
        "--dataset",
        p(&fixture("mini/conversations.json")),
        "--qrels",
        p(&fixture("mini/qrels.txt")),
        "--out",
        p(&tasks),
    ]);
    tasks
}

/// Transcript answering the default rewriter and editor prompts with the scripted rewrites.
fn transcript(dir: &Path, tasks: &Path) -> PathBuf {
    let script: HashMap<String, HashMap<String, String>> =
        serde_json::from_str(&std::fs::read_to_string(fixture("mini/scripted_rewrites.json")).unwrap()).unwrap();
    let demos = default_demonstrations();
    let mut lines = String::new();
    for t in read_tasks(tasks).unwrap() {
        let s = &script[&t.qid()];
        let rw = render_rewriter_prompt(&Instruction::rewriter(), &demos, &t);
        let ed = render_editor_prompt(&Instruction::editor(), &demos, &t, &s["rw_fsl"]).unwrap();
        for (prompt, text) in [(rw, &s["rw_fsl"]), (ed, &s["ed_self"])] {
            let line = serde_json::json!({"prompt_hash": prompt_hash(&prompt), "response_text": text});
            lines.push_str(&format!("{line}\n"));
        }
    }
    let path = dir.join("transcript.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

#[test]
fn prepare_filters_to_judged_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = prepare(dir.path());
    assert_eq!(read_tasks(&tasks).unwrap().len(), 29);
    let m = manifest(&tasks);
    assert_eq!(m["command"], "prepare");
    assert_eq!(m["summary"]["tasks"]["total"], 29);
    assert_eq!(m["summary"]["tasks"]["by_subset"]["TREC"], 5);
    assert_eq!(m["config"]["retrieval"]["k"], 100);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn original_rewrites_search_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tasks = prepare(d);
    let rewrites = d.join("original.jsonl");
    let index = d.join("bm25.idx");
    let run = d.join("original.trec");
    let report = d.join("original.json");
    ok(&["rewrite", "--method", "original", "--tasks", p(&tasks), "--out", p(&rewrites)]);
    ok(&["index-sparse", "--passages", p(&fixture("mini/passages.jsonl")), "--out", p(&index)]);
    ok(&["search", "--retriever", "sparse", "--rewrites", p(&rewrites), "--index", p(&index), "--out", p(&run)]);
    let parsed = RunFile::read(&run).unwrap();
    assert_eq!(parsed.len(), 29);
    assert!(parsed.entries.values().all(|docs| docs.len() <= 100 && !docs.is_empty()));

    let out = ok(&[
        "evaluate",
        "--run",
        p(&run),
        "--qrels",
        p(&fixture("mini/qrels.txt")),
        "--tasks",
        p(&tasks),
        "--out",
        p(&report),
    ]);
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for subset in ["ALL", "QuAC", "NQ", "TREC"] {
        assert!(r.aggregate.contains_key(subset), "missing {subset}");
    }
    assert_eq!(r.query_counts["ALL"], 29);
    assert!(String::from_utf8_lossy(&out.stdout).contains("QReCC (29)"));
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tasks = prepare(d);
    let index = d.join("bm25.idx");
    let rewrites = d.join("human.jsonl");
    let run = d.join("human.trec");
    let mut first = Vec::new();
    for round in 0..2 {
        ok(&["index-sparse", "--passages", p(&fixture("mini/passages.jsonl")), "--out", p(&index)]);
        ok(&["rewrite", "--method", "human", "--tasks", p(&tasks), "--out", p(&rewrites)]);
        ok(&["search", "--retriever", "sparse", "--rewrites", p(&rewrites), "--index", p(&index), "--out", p(&run)]);
        let bytes: Vec<Vec<u8>> = [&tasks, &index, &rewrites, &run].iter().map(|f| std::fs::read(f).unwrap()).collect();
        if round == 0 {
            first = bytes;
        } else {
            assert_eq!(first, bytes);
        }
    }
}

#[test]
fn mock_llm_rewrites_beat_original_queries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tasks = prepare(d);
    let transcript = transcript(d, &tasks);
    let index = d.join("bm25.idx");
    ok(&["index-sparse", "--passages", p(&fixture("mini/passages.jsonl")), "--out", p(&index)]);

    let mut mrr = HashMap::new();
    for method in ["original", "rw-fsl", "ed-self"] {
        let rewrites = d.join(format!("{method}.jsonl"));
        let run = d.join(format!("{method}.trec"));
        let report = d.join(format!("{method}.json"));
        ok(&[
            "rewrite",
            "--method",
            method,
            "--tasks",
            p(&tasks),
            "--mock-transcript",
            p(&transcript),
            "--rate",
            "0",
            "--out",
            p(&rewrites),
        ]);
        ok(&["search", "--retriever", "sparse", "--rewrites", p(&rewrites), "--index", p(&index), "--out", p(&run)]);
        ok(&["evaluate", "--run", p(&run), "--qrels", p(&fixture("mini/qrels.txt")), "--out", p(&report)]);
        let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        mrr.insert(method, r.all("MRR"));
    }
    assert!(mrr["rw-fsl"] > mrr["original"], "{mrr:?}");

    let edited = read_rewrites(d.join("ed-self.jsonl")).unwrap();
    assert!(edited.iter().all(|r| r.method == Method::EdSelf && r.initial_rewrite.is_some() && r.flag.is_none()));

    let cmp = d.join("cmp.json");
    let out = ok(&[
        "compare",
        "--run-a",
        p(&d.join("rw-fsl.trec")),
        "--run-b",
        p(&d.join("original.trec")),
        "--qrels",
        p(&fixture("mini/qrels.txt")),
        "--out",
        p(&cmp),
    ]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&cmp).unwrap()).unwrap();
    let r = &v["result"];
    let n = r["wins"].as_u64().unwrap() + r["ties"].as_u64().unwrap() + r["losses"].as_u64().unwrap();
    assert_eq!(n, 29);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rw_fsl vs original"));

    let stats = d.join("stats.json");
    ok(&[
        "analyze",
        "--rewrites",
        p(&d.join("original.jsonl")),
        "--rewrites",
        p(&d.join("rw-fsl.jsonl")),
        "--tasks",
        p(&tasks),
        "--out",
        p(&stats),
    ]);
    let tables = d.join("tables.txt");
    let eval_a = format!("Sparse (BM25):Original={}", d.join("original.json").display());
    let eval_b = format!("Sparse (BM25):RW(FSL)={}", d.join("rw-fsl.json").display());
    ok(&["report", "--eval", &eval_a, "--eval", &eval_b, "--stats", p(&stats), "--out", p(&tables)]);
    let text = std::fs::read_to_string(&tables).unwrap();
    for needle in ["QReCC (29)", "MRR", "NDCG@3", "R@100", "RW(FSL)", "AT", "%OT"] {
        assert!(text.contains(needle), "report lacks {needle}:\n{text}");
    }
}

#[test]
fn ablation_records_the_instruction_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("instr.json");
    ok(&["ablate", "--drop", "informativeness", "--instruction-out", p(&out)]);
    let m = manifest(&out);
    let text = m["summary"]["rewriter_instruction"].as_str().unwrap();
    assert!(!text.contains("informative"));
    assert!(text.contains("retain its original meaning"));
    assert_eq!(m["summary"]["drop"], "informativeness");
}

#[test]
fn dense_search_over_hash_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tasks = prepare(d);
    let shards = d.join("shards");
    let rewrites = d.join("human.jsonl");
    let run = d.join("dense.trec");
    ok(&["embed", "--passages", p(&fixture("mini/passages.jsonl")), "--dimension", "32", "--out-dir", p(&shards)]);
    assert!(shards.join("shard_007.bin").exists());
    assert!(shards.join("manifest.json").exists());
    ok(&["rewrite", "--method", "human", "--tasks", p(&tasks), "--out", p(&rewrites)]);
    ok(&["search", "--retriever", "dense", "--k", "10", "--rewrites", p(&rewrites), "--index", p(&shards), "--out", p(&run)]);
    let parsed = RunFile::read(&run).unwrap();
    assert_eq!(parsed.len(), 29);
    assert!(parsed.entries.values().all(|docs| docs.len() == 10));
}

#[test]
fn exports_distillation_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = d.join("train_tasks.jsonl");
    let dev = d.join("dev_tasks.jsonl");
    ok(&[
        "prepare",
        "--dataset",
        p(&fixture("mini/conversations.json")),
        "--no-filter",
        "--dev-conversations",
        "3",
        "--dev-out",
        p(&dev),
        "--out",
        p(&train),
    ]);
    assert_eq!(read_tasks(&dev).unwrap().len(), 9);
    let train_out = d.join("train.jsonl");
    let dev_out = d.join("dev.jsonl");
    ok(&[
        "export-distill",
        "--train-tasks",
        p(&train),
        "--dev-tasks",
        p(&dev),
        "--label-source",
        "human",
        "--n-train",
        "10",
        "--n-dev",
        "4",
        "--train-out",
        p(&train_out),
        "--dev-out",
        p(&dev_out),
    ]);
    let lines: Vec<Value> = std::fs::read_to_string(&train_out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["input"].as_str().unwrap().starts_with("<Que> ")));
    assert_eq!(lines[0]["meta"]["label_source"], "human");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["search", "--retriever", "fuzzy"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));

    let missing = cli(&["evaluate", "--run", "/nonexistent/run.trec", "--qrels", "q", "--out", p(&d.join("r.json"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/run.trec"));

    let tasks = prepare(d);
    let no_key = cli(&["rewrite", "--method", "rw-fsl", "--tasks", p(&tasks), "--out", p(&d.join("x.jsonl"))]);
    assert_eq!(no_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_key.stderr).contains("OPENAI_API_KEY"));
    assert!(!d.join("x.jsonl").exists());

    let ed_file = cli(&["rewrite", "--method", "ed-file", "--tasks", p(&tasks), "--out", p(&d.join("y.jsonl"))]);
    assert_eq!(ed_file.status.code(), Some(1));

    let too_many = cli(&[
        "export-distill",
        "--train-tasks",
        p(&tasks),
        "--dev-tasks",
        p(&tasks),
        "--label-source",
        "human",
        "--n-train",
        "1000",
        "--n-dev",
        "1",
        "--train-out",
        p(&d.join("t.jsonl")),
        "--dev-out",
        p(&d.join("v.jsonl")),
    ]);
    assert_eq!(too_many.status.code(), Some(3));
}
