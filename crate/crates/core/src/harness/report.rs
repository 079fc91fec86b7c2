//! Run summaries as JSON lines and aligned text tables.

use serde::Serialize;

use super::evaluate::EvalReport;
use super::train::EpochStats;
use crate::model::ParamCounts;

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub epochs: Vec<EpochStats>,
    pub evals: Vec<EvalReport>,
    pub params: ParamCounts,
    pub train_secs: f64,
}

pub fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report types serialize")
}

/// Left-aligned columns separated by two spaces.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.clone()));
        out.push('\n');
    }
    out
}

impl MetricsReport {
    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .evals
            .iter()
            .map(|e| {
                vec![
                    e.mode.to_string(),
                    format!("{:?}", e.split).to_lowercase(),
                    e.n.to_string(),
                    format!("{:.4}", e.top1),
                    format!("{:.4}", e.hit_at_k),
                    format!("{:.6}", e.secs_per_image),
                ]
            })
            .collect();
        render_table(&["mode", "split", "n", "top1", "hit@k", "s/image"], &rows)
    }
}
