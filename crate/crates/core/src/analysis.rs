//! Rewrite statistics: average token count (AT), overlap with human rewrites
//! (OT), ROUGE-1 and rewriting latency.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Source;
use crate::eval::ALL_SUBSET;
use crate::rewriter::{Method, RewriteMap, RewriteRecord};
use crate::{Error, Result};

/// Lowercased whitespace-separated words with non-alphanumeric characters removed.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Percentage of distinct human-rewrite tokens that also occur in the rewrite;
/// `None` when the human rewrite has no tokens.
pub fn overlap_pct(rewrite: &str, human: &str) -> Option<f64> {
    let h: BTreeSet<String> = tokens(human).into_iter().collect();
    if h.is_empty() {
        return None;
    }
    let r: BTreeSet<String> = tokens(rewrite).into_iter().collect();
    Some(100.0 * h.intersection(&r).count() as f64 / h.len() as f64)
}

/// Unigram F1 with clipped counts; 0 when either side has no tokens.
pub fn rouge1(candidate: &str, reference: &str) -> f64 {
    let count = |toks: Vec<String>| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for t in toks {
            *m.entry(t).or_default() += 1;
        }
        m
    };
    let c = count(tokens(candidate));
    let r = count(tokens(reference));
    let c_total: usize = c.values().sum();
    let r_total: usize = r.values().sum();
    if c_total == 0 || r_total == 0 {
        return 0.0;
    }
    let overlap: usize = c.iter().map(|(t, &n)| n.min(r.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c_total as f64;
    let rec = overlap as f64 / r_total as f64;
    2.0 * p * rec / (p + rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteStats {
    pub method: Method,
    pub subset: String,
    pub count: usize,
    /// Mean tokens per rewrite.
    pub avg_tokens: f64,
    /// Mean per-record OT in percent, over records with a human rewrite.
    pub overlap_pct: Option<f64>,
    /// Mean ROUGE-1 F1 against the human rewrite, in [0, 1].
    pub rouge1: Option<f64>,
    pub mean_latency_ms: Option<f64>,
}

#[derive(Default)]
struct Acc {
    count: usize,
    tokens: usize,
    overlap_sum: f64,
    overlap_n: usize,
    rouge_sum: f64,
    latency_sum: f64,
    latency_n: usize,
}

/// Stats per (method, subset). Subsets are `ALL` plus each source that has
/// records; records whose query is absent from `subsets` count only in `ALL`.
pub fn rewrite_stats(
    records: &[RewriteRecord],
    humans: &RewriteMap,
    subsets: &HashMap<String, Source>,
) -> Result<Vec<RewriteStats>> {
    if records.is_empty() {
        return Err(Error::invalid("no rewrite records"));
    }
    let mut methods: Vec<Method> = Vec::new();
    let mut acc: HashMap<(Method, String), Acc> = HashMap::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let n_tokens = tokens(&r.rewrite).len();
        let human = humans.get(&r.conversation_id, r.turn_no);
        let overlap = human.and_then(|h| overlap_pct(&r.rewrite, h));
        let keys = std::iter::once(ALL_SUBSET.to_string())
            .chain(subsets.get(&r.qid()).map(|s| s.as_str().to_string()));
        for key in keys {
            let a = acc.entry((r.method, key)).or_default();
            a.count += 1;
            a.tokens += n_tokens;
            if let (Some(o), Some(h)) = (overlap, human) {
                a.overlap_sum += o;
                a.overlap_n += 1;
                a.rouge_sum += rouge1(&r.rewrite, h);
            }
            if r.is_timed() {
                a.latency_sum += r.latency_ms;
                a.latency_n += 1;
            }
        }
    }
    let order: Vec<String> = std::iter::once(ALL_SUBSET.to_string())
        .chain(Source::ALL.iter().map(|s| s.as_str().to_string()))
        .collect();
    let mut out = Vec::new();
    for m in methods {
        for subset in &order {
            let Some(a) = acc.get(&(m, subset.clone())) else {
                continue;
            };
            let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
            out.push(RewriteStats {
                method: m,
                subset: subset.clone(),
                count: a.count,
                avg_tokens: a.tokens as f64 / a.count as f64,
                overlap_pct: mean(a.overlap_sum, a.overlap_n),
                rouge1: mean(a.rouge_sum, a.overlap_n),
                mean_latency_ms: mean(a.latency_sum, a.latency_n),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub method: Method,
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
}

pub fn timed_count(records: &[RewriteRecord]) -> usize {
    records.iter().filter(|r| r.is_timed()).count()
}

/// Latency per method over records that made a real model call.
pub fn latency_stats(records: &[RewriteRecord]) -> Result<Vec<LatencyStats>> {
    let mut methods: Vec<Method> = Vec::new();
    let mut samples: HashMap<Method, Vec<f64>> = HashMap::new();
    for r in records.iter().filter(|r| r.is_timed()) {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        samples.entry(r.method).or_default().push(r.latency_ms);
    }
    if methods.is_empty() {
        return Err(Error::invalid("no timed rewrite records (all cached, failed, or non-LLM)"));
    }
    Ok(methods
        .into_iter()
        .map(|m| {
            let mut v = samples.remove(&m).expect("method has samples");
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let median = if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            };
            let p95 = v[(0.95 * n as f64).ceil() as usize - 1];
            LatencyStats {
                method: m,
                count: n,
                mean_ms: v.iter().sum::<f64>() / n as f64,
                median_ms: median,
                p95_ms: p95,
            }
        })
        .collect())
}

/// Methods as rows, source subsets as column groups with AT and %OT.
pub fn format_stats_table(stats: &[RewriteStats]) -> String {
    let subsets: Vec<&str> = Source::ALL
        .iter()
        .map(|s| s.as_str())
        .filter(|s| stats.iter().any(|st| st.subset == *s))
        .collect();
    let subsets = if subsets.is_empty() { vec![ALL_SUBSET] } else { subsets };
    let mut methods: Vec<Method> = Vec::new();
    for s in stats {
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    let mut out = String::new();
    let mut top = format!("{:<10}", "");
    let mut second = format!("{:<10}", "Query");
    for s in &subsets {
        let title = if *s == ALL_SUBSET { "QReCC".to_string() } else { format!("{s}-Conv") };
        let _ = write!(top, "  {title:^17}");
        let _ = write!(second, "  {:>7}  {:>8}", "AT", "%OT");
    }
    let _ = writeln!(out, "{}", top.trim_end());
    let _ = writeln!(out, "{second}");
    let _ = writeln!(out, "{}", "-".repeat(second.len()));
    for m in methods {
        let mut line = format!("{:<10}", m.label());
        for s in &subsets {
            match stats.iter().find(|st| st.method == m && st.subset == *s) {
                Some(st) => {
                    let ot = st.overlap_pct.map_or_else(|| "-".to_string(), |o| format!("{o:.2}"));
                    let _ = write!(line, "  {:>7.2}  {ot:>8}", st.avg_tokens);
                }
                None => {
                    let _ = write!(line, "  {:>7}  {:>8}", "-", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Latency as `N (ms/q)` per method.
pub fn format_latency_table(stats: &[LatencyStats]) -> String {
    let mut header = format!("{:<20}", "");
    let mut row = format!("{:<20}", "Rewriting Latency");
    for s in stats {
        let cell = format!("{:.0} (ms/q)", s.mean_ms);
        let w = cell.len().max(s.method.label().len());
        let _ = write!(header, "  {:>w$}", s.method.label());
        let _ = write!(row, "  {cell:>w$}");
    }
    format!("{}\n{row}\n", header.trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(conv: &str, turn: u32, method: Method, rewrite: &str, latency: f64) -> RewriteRecord {
        RewriteRecord {
            conversation_id: conv.into(),
            turn_no: turn,
            method,
            rewrite: rewrite.into(),
            initial_rewrite: None,
            latency_ms: latency,
            prompt_hash: None,
            cached: false,
            flag: None,
        }
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokens("Who's the U.S. president?"), vec!["whos", "the", "us", "president"]);
        assert!(tokens(" ... ").is_empty());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_pct("a b x", "a b c d"), Some(50.0));
        assert_eq!(overlap_pct("a b c x", "a b c d"), Some(75.0));
        assert_eq!(overlap_pct("same words", "Same words!"), Some(100.0));
        assert_eq!(overlap_pct("a", "?"), None);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge1("a b c", "a b c"), 1.0);
        assert_eq!(rouge1("a b", "c d"), 0.0);
        assert!((rouge1("a b c", "a d") - 0.4).abs() < 1e-12);
        assert_eq!(rouge1("", ""), 0.0);
        assert!((rouge1("a a", "a") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stats_by_subset() {
        let mut humans = RewriteMap::new();
        humans.insert("c1", 1, "a b c d");
        humans.insert("c2", 1, "x y");
        let records = vec![
            record("c1", 1, Method::RwFsl, "a b x", 10.0),
            record("c2", 1, Method::RwFsl, "x y z w", 30.0),
        ];
        let subsets = HashMap::from([("c1_1".to_string(), Source::Quac), ("c2_1".to_string(), Source::Nq)]);
        let stats = rewrite_stats(&records, &humans, &subsets).unwrap();
        assert_eq!(stats.len(), 3);
        let all = &stats[0];
        assert_eq!(all.subset, "ALL");
        assert_eq!(all.avg_tokens, 3.5);
        assert_eq!(all.overlap_pct, Some(75.0));
        assert_eq!(all.mean_latency_ms, Some(20.0));
        assert_eq!(stats[1].subset, "QuAC");
        assert_eq!(stats[1].overlap_pct, Some(50.0));
        assert!(rewrite_stats(&[], &humans, &subsets).is_err());
    }

    #[test]
    fn original_at_matches_question_tokens() {
        let q = "what about his brother?";
        let stats = rewrite_stats(&[record("c", 2, Method::Original, q, 0.0)], &RewriteMap::new(), &HashMap::new()).unwrap();
        assert_eq!(stats[0].avg_tokens, tokens(q).len() as f64);
        assert_eq!(stats[0].overlap_pct, None);
        assert_eq!(stats[0].mean_latency_ms, None);
    }

    #[test]
    fn latency_single_and_cached() {
        let s = latency_stats(&[record("c", 1, Method::RwFsl, "r", 312.0)]).unwrap();
        assert_eq!((s[0].mean_ms, s[0].median_ms, s[0].p95_ms), (312.0, 312.0, 312.0));
        let mut cached = record("c", 1, Method::RwFsl, "r", 0.0);
        cached.cached = true;
        assert!(latency_stats(&[cached]).is_err());
        assert!(format_latency_table(&s).contains("312 (ms/q)"));
    }

    #[test]
    fn latency_percentiles() {
        let records: Vec<_> = (1..=20)
            .map(|i| record("c", i, Method::EdSelf, "r", i as f64))
            .collect();
        let s = &latency_stats(&records).unwrap()[0];
        assert_eq!(s.median_ms, 10.5);
        assert_eq!(s.p95_ms, 19.0);
        assert_eq!(s.mean_ms, 10.5);
    }

    #[test]
    fn stats_table_shape() {
        let mut humans = RewriteMap::new();
        humans.insert("c1", 1, "a b");
        let subsets = HashMap::from([("c1_1".to_string(), Source::Trec)]);
        let stats = rewrite_stats(&[record("c1", 1, Method::Human, "a b", 0.0)], &humans, &subsets).unwrap();
        let t = format_stats_table(&stats);
        assert!(t.lines().next().unwrap().contains("TREC-Conv"));
        assert!(t.contains("Human") && t.contains("100.00"));
    }

    proptest! {
        #[test]
        fn overlap_identity_and_monotone(words in prop::collection::vec("[a-z]{1,6}", 1..10), extra in "[a-z]{1,6}") {
            let x = words.join(" ");
            prop_assert_eq!(overlap_pct(&x, &x), Some(100.0));
            let partial = words[..words.len() / 2].join(" ");
            let grown = format!("{partial} {extra}");
            prop_assert!(overlap_pct(&grown, &x).unwrap() >= overlap_pct(&partial, &x).unwrap());
            prop_assert_eq!(rouge1(&x, &x), 1.0);
        }

        #[test]
        fn rouge_bounded(a in "[a-c ]{0,20}", b in "[a-c ]{0,20}") {
            let r = rouge1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
