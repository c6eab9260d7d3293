//! Text and JSON tables, and disparity-versus-τ curves.

use serde::{Deserialize, Serialize};

use super::sweep::{CellSummary, MeanStd, SweepSummary};
use super::ExperimentError;
use crate::metrics::MetricKind;
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    /// Aligned plain text with a performance block and a disparity block.
    Text,
    /// The summary itself as JSON; parses back to the same [`SweepSummary`].
    Json,
}

fn metric_name(m: MetricKind) -> &'static str {
    match m {
        MetricKind::Accuracy => "accuracy",
        MetricKind::F1 => "F1",
        MetricKind::Mse => "MSE",
    }
}

fn fmt_cell(stat: Option<MeanStd>, cell: &CellSummary) -> String {
    let Some(s) = stat else {
        return "failed".into();
    };
    let mut text = format!("{:.3} ± {:.3}", s.mean, s.std);
    if let Some(eps) = cell.realized_epsilon {
        text.push_str(&format!(" (ε={eps:.2})"));
    }
    if cell.failed {
        text.push_str(&format!(" [{} failed]", cell.seeds_failed));
    }
    text
}

fn row_label(objective: Objective, tau: Option<usize>) -> String {
    match tau {
        Some(t) => format!("{objective} τ={t}"),
        None => objective.to_string(),
    }
}

/// Which per-cell statistic a table block shows.
type Statistic = fn(&CellSummary) -> Option<MeanStd>;

/// Renders a summary as a results table.
pub fn emit_table(summary: &SweepSummary, format: TableFormat) -> Result<String, ExperimentError> {
    if summary.cells.is_empty() {
        return Err(ExperimentError::EmptySummary);
    }
    match format {
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
            s.push('\n');
            Ok(s)
        }
        TableFormat::Text => Ok(text_table(summary)),
    }
}

fn text_table(summary: &SweepSummary) -> String {
    let mut columns: Vec<&str> = Vec::new();
    let mut rows: Vec<(Objective, Option<usize>)> = Vec::new();
    for c in &summary.cells {
        if !columns.contains(&c.privacy_label.as_str()) {
            columns.push(&c.privacy_label);
        }
        if !rows.contains(&(c.objective, c.tau)) {
            rows.push((c.objective, c.tau));
        }
    }
    let metric = metric_name(summary.metric);
    let direction = if summary.higher_is_better { "higher" } else { "lower" };
    let blocks: [(String, Statistic); 2] = [
        (format!("Performance ({metric}, {direction} is better)"), |c| c.score),
        (format!("Group disparity (best minus worst group {metric})"), |c| c.disparity),
    ];

    let mut out = format!("{}: mean ± std over seeds\n", summary.name);
    for (title, stat) in blocks {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("objective".to_string())
            .chain(columns.iter().map(|c| c.to_string()))
            .collect()];
        for &(objective, tau) in &rows {
            let mut line = vec![row_label(objective, tau)];
            for col in &columns {
                let cell = summary
                    .cells
                    .iter()
                    .find(|c| c.objective == objective && c.tau == tau && c.privacy_label == *col);
                line.push(cell.map_or_else(|| "-".into(), |c| fmt_cell(stat(c), c)));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        out.push('\n');
        out.push_str(&title);
        out.push('\n');
        for line in grid {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: usize,
    pub mean: f64,
    pub std: f64,
}

/// Disparity against τ for one objective at one privacy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub objective: Objective,
    pub privacy_label: String,
    pub target_epsilon: Option<f64>,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityCurves {
    pub metric: MetricKind,
    pub series: Vec<CurveSeries>,
}

/// One series per (objective, privacy level), sorted by objective then
/// label; points ascend in τ. Cells without completed seeds are skipped.
pub fn emit_disparity_curves(summary: &SweepSummary) -> Result<DisparityCurves, ExperimentError> {
    let mut taus: Vec<usize> = summary.cells.iter().filter_map(|c| c.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    if taus.len() < 2 {
        return Err(ExperimentError::TooFewTaus(taus.len()));
    }
    let mut series: Vec<CurveSeries> = Vec::new();
    for c in &summary.cells {
        let (Some(tau), Some(d)) = (c.tau, c.disparity) else {
            continue;
        };
        let point = CurvePoint {
            tau,
            mean: d.mean,
            std: d.std,
        };
        match series
            .iter_mut()
            .find(|s| s.objective == c.objective && s.privacy_label == c.privacy_label)
        {
            Some(s) => s.points.push(point),
            None => series.push(CurveSeries {
                objective: c.objective,
                privacy_label: c.privacy_label.clone(),
                target_epsilon: c.target_epsilon,
                points: vec![point],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by_key(|p| p.tau);
    }
    series.sort_by(|a, b| {
        (a.objective.as_str(), &a.privacy_label).cmp(&(b.objective.as_str(), &b.privacy_label))
    });
    Ok(DisparityCurves {
        metric: summary.metric,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFormat {
    Json,
    /// `objective,privacy_label,tau,mean_disparity,std_disparity` rows.
    Csv,
}

pub fn render_curves(curves: &DisparityCurves, format: CurveFormat) -> String {
    match format {
        CurveFormat::Json => {
            let mut s = serde_json::to_string_pretty(curves).expect("curves serialize");
            s.push('\n');
            s
        }
        CurveFormat::Csv => {
            let mut s = String::from("objective,privacy_label,tau,mean_disparity,std_disparity\n");
            for series in &curves.series {
                for p in &series.points {
                    let label = if series.privacy_label.contains([',', '"']) {
                        format!("\"{}\"", series.privacy_label.replace('"', "\"\""))
                    } else {
                        series.privacy_label.clone()
                    };
                    s.push_str(&format!("{},{label},{},{},{}\n", series.objective, p.tau, p.mean, p.std));
                }
            }
            s
        }
    }
}
