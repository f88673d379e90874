use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Qrels, RunFile};
use crate::corpus::Source;
use crate::{Error, Result, ScoredDoc};

pub const ALL_SUBSET: &str = "ALL";

/// Metric cutoffs; names are `MRR`, `MAP`, `R@k` and `NDCG@k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub recall: Vec<usize>,
    pub ndcg: Vec<usize>,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            recall: vec![5, 10, 20, 30, 100],
            ndcg: vec![3],
        }
    }
}

impl Cutoffs {
    pub fn metric_names(&self) -> Vec<String> {
        let mut names = vec!["MRR".to_string(), "MAP".to_string()];
        names.extend(self.recall.iter().map(|k| format!("R@{k}")));
        names.extend(self.ndcg.iter().map(|k| format!("NDCG@{k}")));
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cutoffs: Cutoffs,
    /// Judged queries absent from the run score 0 on every metric instead of being skipped.
    pub missing_as_zero: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: Cutoffs::default(),
            missing_as_zero: true,
        }
    }
}

fn is_relevant(judged: &BTreeMap<String, i32>, doc: &str) -> bool {
    judged.get(doc).is_some_and(|&g| g >= 1)
}

fn relevant_count(judged: &BTreeMap<String, i32>) -> usize {
    judged.values().filter(|&&g| g >= 1).count()
}

pub fn reciprocal_rank(ranking: &[ScoredDoc], judged: &BTreeMap<String, i32>) -> f64 {
    ranking
        .iter()
        .position(|d| is_relevant(judged, &d.passage_id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Mean over relevant documents of precision at their rank; unretrieved relevant count as 0.
pub fn average_precision(ranking: &[ScoredDoc], judged: &BTreeMap<String, i32>) -> f64 {
    let n_rel = relevant_count(judged);
    if n_rel == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if is_relevant(judged, &d.passage_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / n_rel as f64
}

pub fn recall_at(ranking: &[ScoredDoc], judged: &BTreeMap<String, i32>, k: usize) -> f64 {
    let n_rel = relevant_count(judged);
    if n_rel == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| is_relevant(judged, &d.passage_id))
        .count();
    hits as f64 / n_rel as f64
}

/// Gain is the grade, discount `1 / log2(rank + 1)`, normalized by the ideal ordering of all judged grades.
pub fn ndcg_at(ranking: &[ScoredDoc], judged: &BTreeMap<String, i32>, k: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| judged.get(&d.passage_id).copied().unwrap_or(0).max(0) as f64 * discount(i))
        .sum();
    let mut grades: Vec<i32> = judged.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let ideal: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 * discount(i))
        .sum();
    if ideal > 0.0 {
        dcg / ideal
    } else {
        0.0
    }
}

pub fn evaluate_query(ranking: &[ScoredDoc], judged: &BTreeMap<String, i32>, cutoffs: &Cutoffs) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("MRR".to_string(), reciprocal_rank(ranking, judged));
    m.insert("MAP".to_string(), average_precision(ranking, judged));
    for &k in &cutoffs.recall {
        m.insert(format!("R@{k}"), recall_at(ranking, judged, k));
    }
    for &k in &cutoffs.ndcg {
        m.insert(format!("NDCG@{k}"), ndcg_at(ranking, judged, k));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_tag: String,
    /// Metric names in display order.
    pub metrics: Vec<String>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    /// Mean of per-query values, keyed by subset (`ALL`, `QuAC`, `NQ`, `TREC`).
    pub aggregate: BTreeMap<String, BTreeMap<String, f64>>,
    pub query_counts: BTreeMap<String, usize>,
    /// Run queries with no relevant judgment; excluded from every aggregate.
    pub unjudged: Vec<String>,
    /// Judged queries the run does not contain.
    pub missing: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, subset: &str, metric: &str) -> Option<f64> {
        self.aggregate.get(subset)?.get(metric).copied()
    }

    pub fn all(&self, metric: &str) -> f64 {
        self.get(ALL_SUBSET, metric).unwrap_or(0.0)
    }

    /// Subsets in table order, keeping only those with evaluated queries.
    pub fn subsets(&self) -> Vec<String> {
        std::iter::once(ALL_SUBSET.to_string())
            .chain(Source::ALL.iter().map(|s| s.as_str().to_string()))
            .filter(|s| self.aggregate.contains_key(s))
            .collect()
    }
}

/// Scores every judged query; `subsets` maps query ids to their source for the breakdown.
pub fn evaluate_run(
    run: &RunFile,
    qrels: &Qrels,
    options: &EvalOptions,
    subsets: Option<&HashMap<String, Source>>,
) -> MetricReport {
    let metrics = options.cutoffs.metric_names();
    let mut per_query = BTreeMap::new();
    let mut unjudged = Vec::new();
    for (qid, ranking) in &run.entries {
        match qrels.judged(qid) {
            Some(judged) if relevant_count(judged) > 0 => {
                per_query.insert(qid.clone(), evaluate_query(ranking, judged, &options.cutoffs));
            }
            _ => unjudged.push(qid.clone()),
        }
    }
    let missing: Vec<String> = qrels
        .queries()
        .filter(|q| qrels.has_relevant(q) && !run.entries.contains_key(*q))
        .map(String::from)
        .collect();
    if options.missing_as_zero {
        for qid in &missing {
            let judged = qrels.judged(qid).expect("judged query");
            per_query.insert(qid.clone(), evaluate_query(&[], judged, &options.cutoffs));
        }
    }
    if !unjudged.is_empty() {
        tracing::warn!(count = unjudged.len(), "run queries without relevant judgments excluded");
    }
    if !missing.is_empty() {
        tracing::warn!(
            count = missing.len(),
            scored_as_zero = options.missing_as_zero,
            "judged queries missing from run"
        );
    }

    let mut groups: BTreeMap<String, Vec<&BTreeMap<String, f64>>> = BTreeMap::new();
    for (qid, values) in &per_query {
        groups.entry(ALL_SUBSET.to_string()).or_default().push(values);
        if let Some(source) = subsets.and_then(|m| m.get(qid)) {
            groups.entry(source.as_str().to_string()).or_default().push(values);
        }
    }
    let mut aggregate = BTreeMap::new();
    let mut query_counts = BTreeMap::new();
    for (subset, rows) in groups {
        let means = metrics
            .iter()
            .map(|name| {
                let sum: f64 = rows.iter().map(|r| r[name]).sum();
                (name.clone(), sum / rows.len() as f64)
            })
            .collect();
        query_counts.insert(subset.clone(), rows.len());
        aggregate.insert(subset, means);
    }
    MetricReport {
        run_tag: run.tag.clone(),
        metrics,
        per_query,
        aggregate,
        query_counts,
        unjudged,
        missing,
    }
}

/// Aggregate recall at each recall cutoff for one subset.
pub fn recall_curve(report: &MetricReport, subset: &str) -> Vec<(usize, f64)> {
    let Some(agg) = report.aggregate.get(subset) else {
        return Vec::new();
    };
    let mut curve: Vec<(usize, f64)> = agg
        .iter()
        .filter_map(|(name, &v)| Some((name.strip_prefix("R@")?.parse().ok()?, v)))
        .collect();
    curve.sort_by_key(|&(k, _)| k);
    curve
}

/// Per-query reciprocal-rank comparison of run A against run B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinTie {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub win: f64,
    pub tie: f64,
    pub loss: f64,
}

impl WinTie {
    pub fn queries(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

/// Both runs must cover the same queries; only queries with relevant judgments are compared.
pub fn pairwise_win_tie(a: &RunFile, b: &RunFile, qrels: &Qrels) -> Result<WinTie> {
    let qa: BTreeSet<&str> = a.queries().collect();
    let qb: BTreeSet<&str> = b.queries().collect();
    if qa != qb {
        let only_a: Vec<&str> = qa.difference(&qb).copied().collect();
        let only_b: Vec<&str> = qb.difference(&qa).copied().collect();
        return Err(Error::invalid(format!(
            "runs cover different queries; only in A: [{}]; only in B: [{}]",
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for qid in qa {
        let Some(judged) = qrels.judged(qid).filter(|j| relevant_count(j) > 0) else {
            continue;
        };
        let ra = reciprocal_rank(&a.entries[qid], judged);
        let rb = reciprocal_rank(&b.entries[qid], judged);
        match ra.partial_cmp(&rb).expect("finite reciprocal ranks") {
            std::cmp::Ordering::Greater => wins += 1,
            std::cmp::Ordering::Equal => ties += 1,
            std::cmp::Ordering::Less => losses += 1,
        }
    }
    let n = wins + ties + losses;
    if n == 0 {
        return Err(Error::invalid("no judged queries in common"));
    }
    let ratio = |c: usize| c as f64 / n as f64;
    Ok(WinTie {
        wins,
        ties,
        losses,
        win: ratio(wins),
        tie: ratio(ties),
        loss: ratio(losses),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(ids: &[&str]) -> Vec<ScoredDoc> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ScoredDoc {
                passage_id: id.to_string(),
                score: (ids.len() - i) as f64,
                rank: i + 1,
            })
            .collect()
    }

    fn run_of(pairs: &[(&str, &[&str])]) -> RunFile {
        let mut run = RunFile::new("t");
        for (q, ids) in pairs {
            run.insert(*q, ranking(ids)).unwrap();
        }
        run
    }

    fn qrels_of(pairs: &[(&str, &str)]) -> Qrels {
        let mut q = Qrels::default();
        for (qid, doc) in pairs {
            q.insert(*qid, *doc, 1).unwrap();
        }
        q
    }

    #[test]
    fn perfect_single_query() {
        let r = evaluate_run(&run_of(&[("q", &["a", "b"])]), &qrels_of(&[("q", "a")]), &EvalOptions::default(), None);
        for m in ["MRR", "MAP", "NDCG@3", "R@5"] {
            assert_eq!(r.all(m), 1.0, "{m}");
        }
    }

    #[test]
    fn three_query_example() {
        let run = run_of(&[
            ("q1", &["r1", "x"]),
            ("q2", &["x", "y", "z", "r2"]),
            ("q3", &["x", "y"]),
        ]);
        let qrels = qrels_of(&[("q1", "r1"), ("q2", "r2"), ("q3", "r3")]);
        let r = evaluate_run(&run, &qrels, &EvalOptions::default(), None);
        let expected = (1.0 + 0.25 + 0.0) / 3.0;
        assert!((r.all("MRR") - expected).abs() < 1e-12);
        assert!((r.all("MAP") - expected).abs() < 1e-12);
        assert!((r.all("R@10") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unjudged_and_missing_queries() {
        let run = run_of(&[("q1", &["a"]), ("q9", &["a"])]);
        let qrels = qrels_of(&[("q1", "a"), ("q2", "b")]);
        let r = evaluate_run(&run, &qrels, &EvalOptions::default(), None);
        assert_eq!(r.unjudged, vec!["q9"]);
        assert_eq!(r.missing, vec!["q2"]);
        assert_eq!(r.query_counts[ALL_SUBSET], 2);
        assert_eq!(r.all("MRR"), 0.5);
        let skip = EvalOptions {
            missing_as_zero: false,
            ..EvalOptions::default()
        };
        assert_eq!(evaluate_run(&run, &qrels, &skip, None).all("MRR"), 1.0);
    }

    #[test]
    fn subset_breakdown_weights() {
        let run = run_of(&[("a", &["x"]), ("b", &["y", "x"]), ("c", &["z"])]);
        let qrels = qrels_of(&[("a", "x"), ("b", "x"), ("c", "x")]);
        let map = HashMap::from([
            ("a".to_string(), Source::Quac),
            ("b".to_string(), Source::Quac),
            ("c".to_string(), Source::Trec),
        ]);
        let r = evaluate_run(&run, &qrels, &EvalOptions::default(), Some(&map));
        assert_eq!(r.get("QuAC", "MRR"), Some(0.75));
        assert_eq!(r.get("TREC", "MRR"), Some(0.0));
        assert_eq!(r.subsets(), vec!["ALL", "QuAC", "TREC"]);
        let weighted = (0.75 * 2.0 + 0.0) / 3.0;
        assert!((r.all("MRR") - weighted).abs() < 1e-12);
    }

    #[test]
    fn graded_ndcg() {
        let judged = BTreeMap::from([("a".to_string(), 1), ("b".to_string(), 2)]);
        let got = ndcg_at(&ranking(&["a", "b"]), &judged, 3);
        let dcg = 1.0 + 2.0 / 3f64.log2();
        let ideal = 2.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / ideal).abs() < 1e-12);
    }

    #[test]
    fn pairwise_hand_case() {
        let qrels = qrels_of(&[("q1", "r"), ("q2", "r"), ("q3", "r")]);
        let a = run_of(&[("q1", &["r"]), ("q2", &["x", "r"]), ("q3", &["x"])]);
        let b = run_of(&[("q1", &["x", "r"]), ("q2", &["x", "r"]), ("q3", &["r"])]);
        let wt = pairwise_win_tie(&a, &b, &qrels).unwrap();
        assert_eq!((wt.wins, wt.ties, wt.losses), (1, 1, 1));
        assert_eq!(wt.win, 1.0 / 3.0);
        let same = pairwise_win_tie(&a, &a, &qrels).unwrap();
        assert_eq!((same.win, same.tie, same.loss), (0.0, 1.0, 0.0));
    }

    #[test]
    fn pairwise_query_mismatch_lists_difference() {
        let qrels = qrels_of(&[("q1", "r")]);
        let a = run_of(&[("q1", &["r"]), ("q2", &["r"])]);
        let b = run_of(&[("q1", &["r"])]);
        let msg = pairwise_win_tie(&a, &b, &qrels).unwrap_err().to_string();
        assert!(msg.contains("only in A: [q2]"), "{msg}");
    }

    #[test]
    fn recall_curve_is_sorted() {
        let r = evaluate_run(&run_of(&[("q", &["a", "b"])]), &qrels_of(&[("q", "b")]), &EvalOptions::default(), None);
        let curve = recall_curve(&r, ALL_SUBSET);
        assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![5, 10, 20, 30, 100]);
    }

    fn arb_query() -> impl Strategy<Value = (Vec<ScoredDoc>, BTreeMap<String, i32>)> {
        (1usize..60, prop::collection::btree_map(0usize..80, 0i32..3, 1..6)).prop_map(|(n, grades)| {
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let ranking = ids
                .iter()
                .enumerate()
                .map(|(i, id)| ScoredDoc {
                    passage_id: id.clone(),
                    score: -(i as f64),
                    rank: i + 1,
                })
                .collect();
            let judged = grades.into_iter().map(|(d, g)| (format!("d{d}"), g)).collect();
            (ranking, judged)
        })
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_recall_monotone((ranking, judged) in arb_query()) {
            let cut = Cutoffs { recall: (1..=60).collect(), ndcg: vec![1, 3, 10] };
            let m = evaluate_query(&ranking, &judged, &cut);
            for v in m.values() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(v));
            }
            for k in 1..60 {
                let (lo, hi) = (m[&format!("R@{k}")], m[&format!("R@{}", k + 1)]);
                prop_assert!(lo <= hi);
            }
        }

        #[test]
        fn permuting_tail_keeps_mrr_and_recall((ranking, judged) in arb_query(), seed in any::<u64>()) {
            let last_rel = ranking.iter().rposition(|d| is_relevant(&judged, &d.passage_id));
            let start = last_rel.map_or(0, |i| i + 1);
            let mut ids: Vec<String> = ranking.iter().map(|d| d.passage_id.clone()).collect();
            let tail = &mut ids[start..];
            let len = tail.len();
            if len > 1 {
                tail.rotate_left((seed as usize) % len);
            }
            let permuted: Vec<ScoredDoc> = ids.iter().enumerate().map(|(i, id)| ScoredDoc {
                passage_id: id.clone(), score: -(i as f64), rank: i + 1,
            }).collect();
            let cut = Cutoffs::default();
            let a = evaluate_query(&ranking, &judged, &cut);
            let b = evaluate_query(&permuted, &judged, &cut);
            prop_assert_eq!(a["MRR"], b["MRR"]);
            for k in &cut.recall {
                let key = format!("R@{k}");
                prop_assert_eq!(a[&key], b[&key]);
            }
        }
    }
}
