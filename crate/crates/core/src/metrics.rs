//! Accuracy breakdowns and checkpoint selection.

use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{GerneError, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy per true group `[y][a]`; `None` for groups with no samples.
    /// Absent when the dataset carries no true attributes.
    pub group_accuracy: Option<Vec<Vec<Option<f64>>>>,
    pub group_counts: Option<Vec<Vec<usize>>>,
    /// Unweighted mean of the non-empty group accuracies.
    pub gba: Option<f64>,
    /// Minimum group accuracy.
    pub wga: Option<f64>,
    /// 0-based `(y, a)` of the worst group.
    pub worst_group: Option<(usize, usize)>,
    /// Accuracy over the union of minority groups, when a minority mask was given.
    pub minority_accuracy: Option<f64>,
    pub class_accuracy: Vec<f64>,
    pub worst_class_accuracy: f64,
    /// Class-balanced accuracy: unweighted mean of `class_accuracy`.
    pub cba: f64,
    pub accuracy: f64,
    pub num_samples: usize,
}

/// Index of the largest logit; ties go to the lower class id.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = k;
        }
    }
    best
}

pub fn predictions(model: &Model, ds: &GroupedDataset) -> Vec<usize> {
    model
        .forward(ds.features())
        .rows()
        .into_iter()
        .map(|r| predict(r.as_slice().expect("row-major logits")))
        .collect()
}

/// Evaluates against the dataset's true attributes.
pub fn evaluate(model: &Model, ds: &GroupedDataset) -> Result<EvalReport> {
    evaluate_with_minority(model, ds, None)
}

/// Like [`evaluate`]; `minority[y][a]` marks the groups whose union is
/// scored as `minority_accuracy`.
pub fn evaluate_with_minority(
    model: &Model,
    ds: &GroupedDataset,
    minority: Option<&[Vec<bool>]>,
) -> Result<EvalReport> {
    let preds = predictions(model, ds);
    report_from_predictions(&preds, ds, minority)
}

pub fn report_from_predictions(
    preds: &[usize],
    ds: &GroupedDataset,
    minority: Option<&[Vec<bool>]>,
) -> Result<EvalReport> {
    if preds.len() != ds.len() {
        return Err(GerneError::InvalidArgument("one prediction per sample required".into()));
    }
    let k = ds.num_classes();
    let labels = ds.labels();
    let mut class_hits = vec![0usize; k];
    let mut class_counts = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(labels) {
        class_counts[y] += 1;
        class_hits[y] += usize::from(p == y);
    }
    let class_accuracy: Vec<f64> = class_hits
        .iter()
        .zip(&class_counts)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    let cba = class_accuracy.iter().sum::<f64>() / k as f64;
    let worst_class_accuracy = class_accuracy.iter().copied().fold(f64::INFINITY, f64::min);
    let accuracy = class_hits.iter().sum::<usize>() as f64 / ds.len() as f64;

    let mut report = EvalReport {
        group_accuracy: None,
        group_counts: None,
        gba: None,
        wga: None,
        worst_group: None,
        minority_accuracy: None,
        class_accuracy,
        worst_class_accuracy,
        cba,
        accuracy,
        num_samples: ds.len(),
    };

    let Some(attrs) = ds.true_attributes() else {
        return Ok(report);
    };
    let a_count = ds.num_attributes();
    let mut hits = vec![vec![0usize; a_count]; k];
    let mut counts = vec![vec![0usize; a_count]; k];
    for ((&p, &y), &a) in preds.iter().zip(labels).zip(attrs) {
        counts[y][a] += 1;
        hits[y][a] += usize::from(p == y);
    }
    let group_accuracy: Vec<Vec<Option<f64>>> = hits
        .iter()
        .zip(&counts)
        .map(|(h, n)| {
            h.iter()
                .zip(n)
                .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut present = 0usize;
    let mut worst: Option<((usize, usize), f64)> = None;
    for (y, row) in group_accuracy.iter().enumerate() {
        for (a, acc) in row.iter().enumerate() {
            if let Some(acc) = *acc {
                sum += acc;
                present += 1;
                if worst.is_none_or(|(_, w)| acc < w) {
                    worst = Some(((y, a), acc));
                }
            }
        }
    }
    if let Some(mask) = minority {
        let (mut h, mut n) = (0usize, 0usize);
        for y in 0..k {
            for a in 0..a_count {
                if mask.get(y).and_then(|r| r.get(a)).copied().unwrap_or(false) {
                    h += hits[y][a];
                    n += counts[y][a];
                }
            }
        }
        report.minority_accuracy = (n > 0).then(|| h as f64 / n as f64);
    }
    report.gba = (present > 0).then(|| sum / present as f64);
    report.wga = worst.map(|(_, w)| w);
    report.worst_group = worst.map(|(g, _)| g);
    report.group_accuracy = Some(group_accuracy);
    report.group_counts = Some(counts);
    Ok(report)
}

/// Validation score used to pick a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Worst-group validation accuracy (validation attributes known).
    WgaVal,
    /// Worst-class validation accuracy (validation attributes unknown).
    WorstClassVal,
    /// Group-balanced validation accuracy.
    GbaVal,
    /// Accuracy over the minority groups.
    MinorityAcc,
    /// Class-balanced accuracy (auxiliary model selection).
    CbaVal,
}

impl SelectionStrategy {
    pub fn needs_validation_attributes(self) -> bool {
        matches!(
            self,
            SelectionStrategy::WgaVal | SelectionStrategy::GbaVal | SelectionStrategy::MinorityAcc
        )
    }

    /// Higher is better; `None` when the report lacks the needed metric.
    pub fn score(self, report: &EvalReport) -> Option<f64> {
        match self {
            SelectionStrategy::WgaVal => report.wga,
            SelectionStrategy::WorstClassVal => Some(report.worst_class_accuracy),
            SelectionStrategy::GbaVal => report.gba,
            SelectionStrategy::MinorityAcc => report.minority_accuracy,
            SelectionStrategy::CbaVal => Some(report.cba),
        }
    }
}

/// Index of the best checkpoint; ties go to the earlier one.
pub fn select_model(checkpoints: &[EvalReport], strategy: SelectionStrategy) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, report) in checkpoints.iter().enumerate() {
        let score = strategy.score(report).ok_or_else(|| {
            GerneError::InvalidConfig(format!("checkpoint {i} has no score for {strategy:?}"))
        })?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| GerneError::InvalidArgument("no checkpoints to select from".into()))
}
