mod common;

use common::fixture;
use inforewrite::corpus::{filter_evaluable, load_conversations, load_passages, preprocess_tasks, LoadOptions, PassageFields, Source};
use inforewrite::eval::Qrels;

#[test]
fn mini_dataset_preprocesses_and_filters() {
    let convs = load_conversations(fixture("mini/conversations.json"), &LoadOptions::default()).unwrap();
    assert_eq!(convs.len(), 10);
    let tasks = preprocess_tasks(&convs);
    assert_eq!(tasks.len(), 30);

    let first = &tasks[0];
    assert!(first.context.is_empty());
    assert_eq!(first.question, "What is the Karvonen Lighthouse?");
    let third = &tasks[2];
    assert_eq!(third.context.len(), 2);
    assert_eq!(third.question, "Who designed it?");

    let qrels = Qrels::read(fixture("mini/qrels.txt")).unwrap();
    let (kept, counts) = filter_evaluable(&tasks, &qrels);
    assert_eq!(kept.len(), 29);
    assert_eq!(counts.total, 29);
    assert_eq!((counts.get(Source::Quac), counts.get(Source::Nq), counts.get(Source::Trec)), (15, 9, 5));
    assert!(kept.iter().all(|t| t.qid() != "10_3"));
}

#[test]
fn qrels_from_gold_match_qrels_file() {
    let convs = load_conversations(fixture("mini/conversations.json"), &LoadOptions::default()).unwrap();
    let tasks = preprocess_tasks(&convs);
    let from_gold = Qrels::from_gold(tasks.iter().map(|t| (t.qid(), t.gold_passage_ids.iter().cloned().collect::<Vec<_>>())));
    assert_eq!(from_gold, Qrels::read(fixture("mini/qrels.txt")).unwrap());
}

#[test]
fn empty_qrels_keep_nothing() {
    let convs = load_conversations(fixture("mini/conversations.json"), &LoadOptions::default()).unwrap();
    let (kept, counts) = filter_evaluable(&preprocess_tasks(&convs), &Qrels::default());
    assert!(kept.is_empty());
    assert_eq!(counts.total, 0);
}

#[test]
fn reads_tiny_passage_collection() {
    let passages: Vec<_> = load_passages(fixture("passages_tiny.jsonl"), &PassageFields::default())
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    let ids: Vec<&str> = passages.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["d1", "d2", "d3"]);
}
