use std::fmt::Write as _;

use super::{MetricReport, WinTie, ALL_SUBSET};
use crate::corpus::Source;

/// One table row: a retriever group, a method label and its report.
pub struct MetricRow<'a> {
    pub group: String,
    pub label: String,
    pub report: &'a MetricReport,
}

/// Column-group title, e.g. `QReCC (8209)` or `QuAC-Conv (6396)`.
pub fn subset_header(subset: &str, count: Option<usize>) -> String {
    let name = if subset == ALL_SUBSET {
        "QReCC".to_string()
    } else {
        format!("{subset}-Conv")
    };
    match count {
        Some(n) => format!("{name} ({n})"),
        None => name,
    }
}

/// Aligned plain-text table: subsets as column groups, metrics (x100, two
/// decimals) within each group, one row per method, rows grouped by retriever.
pub fn format_metric_table(rows: &[MetricRow<'_>], metrics: &[&str]) -> String {
    let subsets: Vec<&str> = std::iter::once(ALL_SUBSET)
        .chain(Source::ALL.iter().map(|s| s.as_str()))
        .filter(|s| rows.iter().any(|r| r.report.aggregate.contains_key(*s)))
        .collect();

    let mut header1 = vec![String::new(), String::new()];
    let mut header2 = vec!["Retriever".to_string(), "Query".to_string()];
    for s in &subsets {
        let count = rows.iter().find_map(|r| r.report.query_counts.get(*s).copied());
        header1.push(subset_header(s, count));
        header1.extend(std::iter::repeat_n(String::new(), metrics.len().saturating_sub(1)));
        header2.extend(metrics.iter().map(|m| m.to_string()));
    }
    let mut body: Vec<Vec<String>> = Vec::new();
    let mut last_group: Option<&str> = None;
    for r in rows {
        let group = if last_group == Some(r.group.as_str()) {
            String::new()
        } else {
            r.group.clone()
        };
        last_group = Some(&r.group);
        let mut line = vec![group, r.label.clone()];
        for s in &subsets {
            for m in metrics {
                line.push(
                    r.report
                        .get(s, m)
                        .map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0)),
                );
            }
        }
        body.push(line);
    }

    let n_cols = header2.len();
    let mut widths = vec![0usize; n_cols];
    for line in std::iter::once(&header2).chain(&body) {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.chars().count());
        }
    }
    // Group titles span their metric columns.
    for (g, _) in subsets.iter().enumerate() {
        let first = 2 + g * metrics.len();
        let span: usize = widths[first..first + metrics.len()].iter().sum::<usize>() + 2 * (metrics.len() - 1);
        let need = header1[first].chars().count();
        if need > span {
            widths[first + metrics.len() - 1] += need - span;
        }
    }

    let render = |line: &[String], out: &mut String| {
        let mut cells = Vec::with_capacity(n_cols);
        for (i, cell) in line.iter().enumerate() {
            if i < 2 {
                cells.push(format!("{cell:<w$}", w = widths[i]));
            } else {
                cells.push(format!("{cell:>w$}", w = widths[i]));
            }
        }
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    };

    let mut out = String::new();
    let mut top = format!("{:<w0$}  {:<w1$}", "", "", w0 = widths[0], w1 = widths[1]);
    for (g, _) in subsets.iter().enumerate() {
        let first = 2 + g * metrics.len();
        let span: usize = widths[first..first + metrics.len()].iter().sum::<usize>() + 2 * (metrics.len() - 1);
        let _ = write!(top, "  {:^span$}", header1[first]);
    }
    let _ = writeln!(out, "{}", top.trim_end());
    render(&header2, &mut out);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for line in &body {
        render(line, &mut out);
    }
    out
}

pub fn format_win_tie(a: &str, b: &str, wt: &WinTie) -> String {
    format!(
        "{a} vs {b}: win {:.2}%  tie {:.2}%  loss {:.2}%  ({} queries)",
        wt.win * 100.0,
        wt.tie * 100.0,
        wt.loss * 100.0,
        wt.queries()
    )
}
