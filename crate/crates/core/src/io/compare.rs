//! Side-by-side comparison of completed runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::run::{read_summary, RunSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub mean_prediction_time_ms: f64,
    pub final_smse: Option<f64>,
    pub mean_active_agents: f64,
    pub mean_abs_error: f64,
    /// 1 for the fastest method, 2 for the second fastest, otherwise `None`.
    pub speed_rank: Option<u8>,
}

/// Everything about a run's configuration except the method and where it was written.
fn scenario_key(s: &RunSummary) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(&s.config).map_err(|e| Error::Serde(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("method");
        obj.remove("output_dir");
        obj.remove("timing_repeats");
    }
    Ok(v)
}

pub fn compare_summaries(summaries: &[RunSummary]) -> Result<Vec<ComparisonRow>> {
    if summaries.len() < 2 {
        return Err(Error::ComparisonInvalid("need at least two runs to compare".into()));
    }
    let key = scenario_key(&summaries[0])?;
    for (i, s) in summaries.iter().enumerate().skip(1) {
        if scenario_key(s)? != key {
            return Err(Error::ComparisonInvalid(format!(
                "run {} ({}) differs from run 0 in scenario, data or seed",
                i, s.stats.method
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = summaries
        .iter()
        .map(|s| ComparisonRow {
            method: s.stats.method.clone(),
            mean_prediction_time_ms: s.stats.mean_prediction_time_ms,
            final_smse: s.stats.final_smse,
            mean_active_agents: s.stats.mean_active_agents,
            mean_abs_error: s.stats.mean_abs_error,
            speed_rank: None,
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].mean_prediction_time_ms.total_cmp(&rows[b].mean_prediction_time_ms));
    if summaries.iter().all(|s| !s.no_timing) {
        rows[order[0]].speed_rank = Some(1);
        rows[order[1]].speed_rank = Some(2);
    }
    Ok(rows)
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    let summaries = dirs.iter().map(|d| read_summary(d)).collect::<Result<Vec<_>>>()?;
    compare_summaries(&summaries)
}

/// Plain-text table; the fastest time is marked `*`, the second fastest `+`.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>10}  {:>8}  {:>10}\n",
        "method", "time_ms", "smse", "active", "mae"
    );
    for r in rows {
        let mark = match r.speed_rank {
            Some(1) => "*",
            Some(2) => "+",
            _ => " ",
        };
        let smse = r.final_smse.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "{:<width$}  {:>11.4}{}  {:>10}  {:>8.2}  {:>10.4}\n",
            r.method, r.mean_prediction_time_ms, mark, smse, r.mean_active_agents, r.mean_abs_error
        ));
    }
    out
}
