//! Task scores, per-group evaluation and group disparity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, GroupId, Model, ModelError, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric over zero examples")]
    Empty,
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("group scores are empty")]
    NoGroups,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    F1,
    Mse,
}

impl MetricKind {
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, MetricKind::Mse)
    }

    /// Computes this metric over aligned predictions and labels.
    pub fn compute(&self, predictions: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
        match self {
            MetricKind::Accuracy => accuracy(predictions, labels),
            MetricKind::F1 => f1_binary(predictions, labels),
            MetricKind::Mse => mse(predictions, labels),
        }
    }
}

fn check_lengths(predictions: &[f64], labels: &[f64]) -> Result<(), MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(predictions: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / predictions.len() as f64)
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    check_lengths(predictions, targets)?;
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sse / predictions.len() as f64)
}

/// Positive-class F1; 0 when precision + recall is 0.
pub fn f1_binary(predictions: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check_lengths(predictions, labels)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == 1.0, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN), and is 0 exactly when TP = 0
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
}

/// One score per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub per_group: Vec<f64>,
    pub metric_kind: MetricKind,
    pub higher_is_better: bool,
}

impl GroupScores {
    pub fn new(per_group: Vec<f64>, metric_kind: MetricKind) -> Self {
        Self {
            per_group,
            metric_kind,
            higher_is_better: metric_kind.higher_is_better(),
        }
    }
}

/// Best-minus-worst gap across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub delta: f64,
    pub best_group: GroupId,
    pub worst_group: GroupId,
}

/// Predictions of `model` for every example of `dataset`, in order.
pub fn predict_all(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<Vec<f64>, MetricError> {
    dataset
        .examples()
        .iter()
        .map(|ex| model.predict(params, ex).map_err(MetricError::from))
        .collect()
}

/// Computes `metric` separately on every group of `dataset`.
pub fn evaluate_groups(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
    metric: MetricKind,
) -> Result<GroupScores, MetricError> {
    dataset.require_nonempty_groups()?;
    let preds = predict_all(model, params, dataset)?;
    scores_by_group(&preds, dataset, metric)
}

/// Per-group scores of precomputed predictions aligned with `dataset`.
pub fn scores_by_group(
    predictions: &[f64],
    dataset: &Dataset,
    metric: MetricKind,
) -> Result<GroupScores, MetricError> {
    let per_group = dataset
        .group_indices()
        .iter()
        .map(|idx| {
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| dataset.examples()[i].label).collect();
            metric.compute(&p, &y)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroupScores::new(per_group, metric))
}

/// `max - min` of the group scores, with best/worst oriented by
/// `higher_is_better`. Ties resolve to the lowest group id.
pub fn group_disparity(scores: &GroupScores) -> Result<DisparityReport, MetricError> {
    let s = &scores.per_group;
    if s.is_empty() {
        return Err(MetricError::NoGroups);
    }
    let (mut imax, mut imin) = (0, 0);
    for (i, &v) in s.iter().enumerate() {
        if v > s[imax] {
            imax = i;
        }
        if v < s[imin] {
            imin = i;
        }
    }
    let (best_group, worst_group) = if scores.higher_is_better {
        (imax, imin)
    } else {
        (imin, imax)
    };
    Ok(DisparityReport {
        delta: s[imax] - s[imin],
        best_group,
        worst_group,
    })
}
