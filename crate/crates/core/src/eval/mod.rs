//! TREC run and qrels files, ranked-retrieval metrics and report tables.

mod metrics;
mod report;
mod trec;

pub use metrics::{
    average_precision, evaluate_query, evaluate_run, ndcg_at, pairwise_win_tie, recall_at, recall_curve,
    reciprocal_rank, Cutoffs, EvalOptions, MetricReport, WinTie, ALL_SUBSET,
};
pub use report::{format_metric_table, format_win_tie, subset_header, MetricRow};
pub use trec::{parse_run, write_run, Qrels, RunFile};
