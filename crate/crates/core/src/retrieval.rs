//! Rewrite records to ranked runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dense::{embed, search_dense, EmbeddingProvider, VectorShard};
use crate::eval::RunFile;
use crate::rewriter::RewriteRecord;
use crate::sparse::Bm25Index;
use crate::{Error, Result, ScoredDoc};

/// Runs `search` over every record's rewrite on `workers` threads. Query ids
/// must be unique.
pub fn build_run<F>(tag: &str, records: &[RewriteRecord], workers: usize, search: F) -> Result<RunFile>
where
    F: Fn(&str) -> Result<Vec<ScoredDoc>> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<ScoredDoc>>>>> =
        Mutex::new((0..records.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, records.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = records.get(i) else { break };
                let docs = search(&record.rewrite);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(docs);
            });
        }
    });
    let mut run = RunFile::new(tag);
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    for (record, docs) in records.iter().zip(results) {
        run.insert(record.qid(), docs.expect("every slot filled")?)?;
    }
    Ok(run)
}

pub fn sparse_run(tag: &str, index: &Bm25Index, records: &[RewriteRecord], k: usize, workers: usize) -> Result<RunFile> {
    build_run(tag, records, workers, |q| Ok(index.search(q, k)))
}

/// Texts per embedding-provider call.
pub const EMBED_BATCH: usize = 256;

/// Embeds the rewrites in batches, then searches the shards.
pub fn dense_run(
    tag: &str,
    shards: &[VectorShard],
    provider: &dyn EmbeddingProvider,
    records: &[RewriteRecord],
    k: usize,
) -> Result<RunFile> {
    if let Some(shard) = shards.first() {
        if shard.dimension != provider.dimension() {
            return Err(Error::invalid(format!(
                "index dimension {} does not match provider dimension {}",
                shard.dimension,
                provider.dimension()
            )));
        }
    }
    let mut run = RunFile::new(tag);
    for batch in records.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|r| r.rewrite.clone()).collect();
        for (record, v) in batch.iter().zip(embed(&texts, provider)?) {
            run.insert(record.qid(), search_dense(&v, shards, k)?)?;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::dense::{build_shards, HashEmbedder};
    use crate::rewriter::Method;
    use crate::sparse::{build_index, Analyzer, Bm25Params};

    fn record(conv: &str, turn: u32, rewrite: &str) -> RewriteRecord {
        RewriteRecord {
            conversation_id: conv.into(),
            turn_no: turn,
            method: Method::Original,
            rewrite: rewrite.into(),
            initial_rewrite: None,
            latency_ms: 0.0,
            prompt_hash: None,
            cached: false,
            flag: None,
        }
    }

    fn passages() -> Vec<Passage> {
        [("a", "red apples grow"), ("b", "green pears"), ("c", "red cars")]
            .iter()
            .map(|(id, text)| Passage { id: id.to_string(), text: text.to_string() })
            .collect()
    }

    #[test]
    fn sparse_run_keys_by_qid_and_caps_depth() {
        let index = build_index(passages(), &Analyzer::default(), Bm25Params::default()).unwrap();
        let records = [record("1", 1, "red apples"), record("1", 2, "pears"), record("2", 1, "nothing matches")];
        let run = sparse_run("bm25", &index, &records, 1, 3).unwrap();
        assert_eq!(run.len(), 3);
        assert_eq!(run.get("1_1").unwrap()[0].passage_id, "a");
        assert_eq!(run.get("1_2").unwrap()[0].passage_id, "b");
        assert!(run.get("2_1").unwrap().is_empty());
        assert!(run.entries.values().all(|d| d.len() <= 1));
    }

    #[test]
    fn duplicate_queries_are_rejected() {
        let index = build_index(passages(), &Analyzer::default(), Bm25Params::default()).unwrap();
        let records = [record("1", 1, "red"), record("1", 1, "red")];
        assert!(sparse_run("bm25", &index, &records, 10, 2).is_err());
    }

    #[test]
    fn dense_run_finds_identical_text_first() {
        let embedder = HashEmbedder::new(16, 7);
        let docs = passages();
        let texts: Vec<String> = docs.iter().map(|p| p.text.clone()).collect();
        let vectors = embed(&texts, &embedder).unwrap();
        let shards = build_shards(docs.iter().map(|p| p.id.clone()).collect(), vectors, 2).unwrap();
        let run = dense_run("dense", &shards, &embedder, &[record("1", 1, "green pears")], 3).unwrap();
        let ranking = run.get("1_1").unwrap();
        assert_eq!(ranking.len(), 3);
        assert_eq!(ranking[0].passage_id, "b");
        assert!(dense_run("dense", &shards, &HashEmbedder::new(8, 7), &[record("1", 1, "x")], 3).is_err());
    }
}
