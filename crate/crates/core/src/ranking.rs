//! Ranked results and a bounded top-k collector shared by the retrievers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// One retrieved passage. Ranks start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Orders candidates by descending score, then ascending key.
///
/// Keys must order the same way the passage ids they stand for do, so that
/// ties break identically whatever the key type.
pub fn better<K: Ord>(a: (f64, &K), b: (f64, &K)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Entry<K> {
    score: f64,
    key: K,
}

// The heap keeps the worst retained candidate on top.
impl<K: Ord> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        better((self.score, &self.key), (other.score, &other.key))
    }
}

impl<K: Ord> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K: Ord> Eq for Entry<K> {}

pub struct TopK<K> {
    k: usize,
    heap: BinaryHeap<Entry<K>>,
}

impl<K: Ord> TopK<K> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1),
        }
    }

    pub fn push(&mut self, score: f64, key: K) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Entry { score, key });
            return;
        }
        let worst = self.heap.peek().expect("heap is full");
        if better((score, &key), (worst.score, &worst.key)) == Ordering::Less {
            self.heap.pop();
            self.heap.push(Entry { score, key });
        }
    }

    /// Best first.
    pub fn into_sorted(self) -> Vec<(f64, K)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| (e.score, e.key))
            .collect()
    }
}

/// Assigns contiguous ranks starting at 1.
pub fn to_scored_docs(items: impl IntoIterator<Item = (f64, String)>) -> Vec<ScoredDoc> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, (score, passage_id))| ScoredDoc {
            passage_id,
            score,
            rank: i + 1,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_by_ascending_key() {
        let mut top = TopK::new(2);
        top.push(1.0, "d3".to_string());
        top.push(1.0, "d1".to_string());
        top.push(1.0, "d2".to_string());
        let got: Vec<_> = top.into_sorted().into_iter().map(|(_, k)| k).collect();
        assert_eq!(got, vec!["d1", "d2"]);
    }

    #[test]
    fn zero_k_keeps_nothing() {
        let mut top = TopK::new(0);
        top.push(3.0, 1u32);
        assert!(top.into_sorted().is_empty());
    }

    proptest! {
        #[test]
        fn heap_matches_full_sort(scores in prop::collection::vec(0u8..6, 0..60), k in 1usize..20) {
            let mut top = TopK::new(k);
            for (i, s) in scores.iter().enumerate() {
                top.push(*s as f64, i);
            }
            let mut all: Vec<(f64, usize)> = scores.iter().enumerate().map(|(i, s)| (*s as f64, i)).collect();
            all.sort_by(|a, b| better((a.0, &a.1), (b.0, &b.1)));
            all.truncate(k);
            prop_assert_eq!(top.into_sorted(), all);
        }
    }
}
