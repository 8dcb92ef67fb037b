//! Pseudo-attributes for datasets whose training attributes are unknown.
//!
//! A biased auxiliary model is trained on biased batches only. Within each
//! class the samples it is least confident about (lowest softmax probability
//! of the true class) become the pseudo-minority group `ã = 1` (stored as
//! 0); the rest form `ã = 2` (stored as 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{compute_group_stats, GroupStats, GroupedDataset};
use crate::error::{GerneError, Result};
use crate::harness::train::{train_extrapolated, TrainOutcome, TrainParams};
use crate::metrics::{evaluate, SelectionStrategy};
use crate::model::{init_model, sgd_step, Architecture, Model, OptimizerSettings, OptimizerState};
use crate::rng::{self, Stream};
use crate::sampling::sample_biased_batch;

/// Hyperparameters of the auxiliary model, derived from the main run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryParams {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerSettings,
    pub per_class: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
}

impl AuxiliaryParams {
    /// Same architecture and batch size; learning rate divided by ten and
    /// weight decay doubled.
    pub fn derived_from(main: &TrainParams) -> Self {
        Self {
            hidden: main.hidden.clone(),
            optimizer: OptimizerSettings {
                learning_rate: main.optimizer.learning_rate / 10.0,
                momentum: main.optimizer.momentum,
                weight_decay: main.optimizer.weight_decay * 2.0,
            },
            per_class: main.per_class,
            epochs: main.epochs,
            steps_per_epoch: main.steps_per_epoch,
        }
    }
}

/// Trains the auxiliary model on biased batches; the checkpoint with the best
/// class-balanced validation accuracy is returned (earliest on ties).
pub fn train_biased_model(
    train: &GroupedDataset,
    val: &GroupedDataset,
    params: &AuxiliaryParams,
    seed: u64,
) -> Result<(Model, f64)> {
    let arch = Architecture::mlp(train.dim(), &params.hidden, train.num_classes());
    let mut rng = rng::stream(seed, Stream::Auxiliary);
    let mut model = init_model(&arch, &mut rng)?;
    let mut opt = OptimizerState::new(params.optimizer, arch.num_parameters())?;
    let mut best = (model.clone(), f64::NEG_INFINITY);
    for epoch in 0..params.epochs {
        for _ in 0..params.steps_per_epoch {
            let batch = sample_biased_batch(train, params.per_class, &mut rng)?;
            let (loss, grad) = model
                .batch_gradient(batch.features.view(), &batch.labels, None)
                .map_err(|_| GerneError::Divergence { epoch })?;
            if !loss.is_finite() {
                return Err(GerneError::Divergence { epoch });
            }
            sgd_step(&mut model, &mut opt, &grad);
        }
        let cba = SelectionStrategy::CbaVal
            .score(&evaluate(&model, val)?)
            .expect("cba always present");
        if cba > best.1 {
            best = (model.clone(), cba);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGrouping {
    pub threshold: f64,
    /// Per sample: 0 for the pseudo-minority `ã = 1`, 1 for `ã = 2`.
    pub assignment: Vec<usize>,
    /// Softmax probability of the true class under the auxiliary model.
    pub confidence: Vec<f64>,
    /// `sizes[y] = [|X_{y,ã=1}|, |X_{y,ã=2}|]`.
    pub sizes: Vec<[usize; 2]>,
}

impl PseudoGrouping {
    /// Writes `sample_index,class,pseudo_attribute,confidence` (1-based ids).
    pub fn write_csv(&self, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["sample_index", "class", "pseudo_attribute", "confidence"])?;
        for (i, ((&a, &conf), &y)) in self.assignment.iter().zip(&self.confidence).zip(labels).enumerate() {
            w.write_record([
                i.to_string(),
                (y + 1).to_string(),
                (a + 1).to_string(),
                conf.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Softmax probability of each sample's own label.
pub fn true_class_confidence(model: &Model, ds: &GroupedDataset) -> Vec<f64> {
    let logits = model.forward(ds.features());
    logits
        .rows()
        .into_iter()
        .zip(ds.labels())
        .map(|(z, &y)| {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
            (z[y] - m).exp() / denom
        })
        .collect()
}

/// Splits every class by auxiliary-model confidence.
pub fn assign_pseudo_attributes(model: &Model, ds: &GroupedDataset, t: f64) -> Result<PseudoGrouping> {
    let confidence = true_class_confidence(model, ds);
    assign_from_confidence(&confidence, ds, t)
}

/// The `floor(t * |X_y|)` lowest-confidence samples of class `y` (at least
/// one; ties by ascending index) form `ã = 1`.
pub fn assign_from_confidence(confidence: &[f64], ds: &GroupedDataset, t: f64) -> Result<PseudoGrouping> {
    if !(t > 0.0 && t < 1.0) {
        return Err(GerneError::InvalidArgument(format!("threshold t = {t} must lie in (0, 1)")));
    }
    if confidence.len() != ds.len() {
        return Err(GerneError::InvalidArgument("one confidence per sample required".into()));
    }
    let mut assignment = vec![1; ds.len()];
    let mut sizes = Vec::with_capacity(ds.num_classes());
    for (y, members) in ds.class_index().iter().enumerate() {
        if members.len() < 2 {
            return Err(GerneError::InvalidArgument(format!(
                "class {} needs at least two samples to form two pseudo-groups",
                y + 1
            )));
        }
        let raw = (t * members.len() as f64).floor() as usize;
        if raw == 0 {
            log::warn!(
                "t = {t} selects no sample of class {} ({} samples); using one",
                y + 1,
                members.len()
            );
        }
        let take = raw.max(1);
        let mut order = members.clone();
        order.sort_by(|&i, &j| confidence[i].total_cmp(&confidence[j]).then(i.cmp(&j)));
        for &i in &order[..take] {
            assignment[i] = 0;
        }
        sizes.push([take, members.len() - take]);
    }
    Ok(PseudoGrouping {
        threshold: t,
        assignment,
        confidence: confidence.to_vec(),
        sizes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitQuality {
    /// Fraction of true-minority samples inside each pseudo-minority group.
    pub precision: Vec<f64>,
    /// Fraction of each class's true-minority samples that landed in its
    /// pseudo-minority group; `None` for classes without minority samples.
    pub recall: Vec<Option<f64>>,
    pub mean_precision: f64,
    pub mean_recall: Option<f64>,
}

/// Scores a pseudo split against true attributes. `minority[y][a]` marks the
/// true minority groups (usually `alpha_ya < 1/A`).
pub fn score_split(
    grouping: &PseudoGrouping,
    labels: &[usize],
    true_attributes: &[usize],
    minority: &[Vec<bool>],
) -> Result<SplitQuality> {
    if labels.len() != grouping.assignment.len() || true_attributes.len() != labels.len() {
        return Err(GerneError::InvalidArgument("grouping, labels and attributes differ in length".into()));
    }
    let k = grouping.sizes.len();
    let mut hit = vec![0usize; k];
    let mut picked = vec![0usize; k];
    let mut total_minority = vec![0usize; k];
    for ((&y, &a), &pa) in labels.iter().zip(true_attributes).zip(&grouping.assignment) {
        let is_minority = minority[y][a];
        total_minority[y] += usize::from(is_minority);
        if pa == 0 {
            picked[y] += 1;
            hit[y] += usize::from(is_minority);
        }
    }
    let precision: Vec<f64> = hit
        .iter()
        .zip(&picked)
        .map(|(&h, &p)| if p > 0 { h as f64 / p as f64 } else { 0.0 })
        .collect();
    let recall: Vec<Option<f64>> = hit
        .iter()
        .zip(&total_minority)
        .map(|(&h, &m)| (m > 0).then(|| h as f64 / m as f64))
        .collect();
    let defined: Vec<f64> = recall.iter().flatten().copied().collect();
    Ok(SplitQuality {
        mean_precision: precision.iter().sum::<f64>() / k as f64,
        mean_recall: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        precision,
        recall,
    })
}

/// Groups with `alpha_ya < 1/A`.
pub fn minority_mask(stats: &GroupStats) -> Vec<Vec<bool>> {
    let uniform = 1.0 / stats.num_attributes() as f64;
    stats
        .alpha
        .iter()
        .map(|row| row.iter().map(|&a| a < uniform).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct UnknownAttributeOutcome {
    pub outcome: TrainOutcome,
    pub grouping: PseudoGrouping,
    pub pseudo_stats: GroupStats,
    pub quality: Option<SplitQuality>,
}

/// Extrapolated training over the pseudo-groups of `train`.
///
/// `params.beta` must be feasible for the pseudo-group statistics; the
/// pseudo stats' full bound is the ceiling for `beta` here.
pub fn run_unknown_attribute_training(
    train: &GroupedDataset,
    val: &GroupedDataset,
    auxiliary: &Model,
    t: f64,
    params: &TrainParams,
    seed: u64,
    eval_minority: Option<&[Vec<bool>]>,
) -> Result<UnknownAttributeOutcome> {
    let grouping = assign_pseudo_attributes(auxiliary, train, t)?;
    let pseudo_train = train.with_pseudo_attributes(&grouping)?;
    let pseudo_stats = compute_group_stats(&pseudo_train)?;
    let quality = match train.true_attributes() {
        Some(attrs) => {
            let true_stats = GroupStats::from_sizes(
                train
                    .true_group_index()
                    .expect("attributes present")
                    .iter()
                    .map(|row| row.iter().map(Vec::len).collect())
                    .collect(),
            );
            match true_stats {
                Ok(stats) => Some(score_split(&grouping, train.labels(), attrs, &minority_mask(&stats))?),
                Err(_) => None,
            }
        }
        None => None,
    };
    let outcome = train_extrapolated(&pseudo_train, val, params, seed, eval_minority)?;
    Ok(UnknownAttributeOutcome {
        outcome,
        grouping,
        pseudo_stats,
        quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use ndarray::Array2;

    fn tiny(labels: Vec<usize>, attrs: Vec<usize>) -> GroupedDataset {
        let n = labels.len();
        GroupedDataset::new(Array2::zeros((n, 1)), labels, Some(attrs), 2, 2).unwrap()
    }

    #[test]
    fn lowest_confidences_form_pseudo_minority() {
        let ds = tiny(vec![0, 0, 0, 0, 1, 1], vec![0, 1, 0, 1, 1, 0]);
        let conf = [0.9, 0.2, 0.8, 0.1, 0.6, 0.3];
        let g = assign_from_confidence(&conf, &ds, 0.5).unwrap();
        assert_eq!(&g.assignment[..4], &[1, 0, 1, 0]);
        assert_eq!(g.sizes, vec![[2, 2], [1, 1]]);
        assert_eq!(g.assignment[4..], [1, 0]);
    }

    #[test]
    fn ties_break_by_index_and_tiny_t_clamps() {
        let ds = tiny(vec![0, 0, 0, 1, 1, 1], vec![0; 6]);
        let conf = [0.5; 6];
        let g = assign_from_confidence(&conf, &ds, 0.4).unwrap();
        assert_eq!(g.assignment, vec![0, 1, 1, 0, 1, 1]);
        let clamped = assign_from_confidence(&conf, &ds, 1e-4).unwrap();
        assert_eq!(clamped.sizes, vec![[1, 2], [1, 2]]);
        assert!(assign_from_confidence(&conf, &ds, 0.0).is_err());
        assert!(assign_from_confidence(&conf, &ds, 1.0).is_err());
    }

    #[test]
    fn oracle_ranking_gives_perfect_split() {
        let spec = SyntheticSpec::aligned(2, 0.01, 1000, 6, 2);
        let ds = generate_synthetic(&spec).unwrap();
        let attrs = ds.true_attributes().unwrap().to_vec();
        // confidence 0 for the minority (a != y), 1 otherwise
        let conf: Vec<f64> = ds
            .labels()
            .iter()
            .zip(&attrs)
            .map(|(&y, &a)| if a == y { 1.0 } else { 0.0 })
            .collect();
        let g = assign_from_confidence(&conf, &ds, 0.01).unwrap();
        let stats = compute_group_stats(&ds).unwrap();
        let q = score_split(&g, ds.labels(), &attrs, &minority_mask(&stats)).unwrap();
        assert_eq!(q.mean_precision, 1.0);
        assert_eq!(q.mean_recall, Some(1.0));
        // partition check: sizes add up and obey the floor rule
        for (y, s) in g.sizes.iter().enumerate() {
            assert_eq!(s[0] + s[1], ds.class_index()[y].len());
            assert_eq!(s[0], 10);
        }
    }

    #[test]
    fn small_t_trades_recall_for_precision() {
        let spec = SyntheticSpec::aligned(2, 0.01, 1000, 6, 2);
        let ds = generate_synthetic(&spec).unwrap();
        let attrs = ds.true_attributes().unwrap().to_vec();
        let conf: Vec<f64> = ds.labels().iter().zip(&attrs).enumerate()
            .map(|(i, (&y, &a))| if a == y { 0.5 + (i % 97) as f64 / 200.0 } else { (i % 13) as f64 / 100.0 })
            .collect();
        let stats = compute_group_stats(&ds).unwrap();
        let q = score_split(&assign_from_confidence(&conf, &ds, 0.003).unwrap(), ds.labels(), &attrs, &minority_mask(&stats)).unwrap();
        assert_eq!(q.mean_precision, 1.0);
        assert!(q.mean_recall.unwrap() < 0.5);
    }

    #[test]
    fn pseudo_csv_export() {
        let ds = tiny(vec![0, 0, 1, 1], vec![0, 1, 1, 0]);
        let g = assign_from_confidence(&[0.9, 0.1, 0.7, 0.2], &ds, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pseudo.csv");
        g.write_csv(ds.labels(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "sample_index,class,pseudo_attribute,confidence\n0,1,2,0.9\n1,1,1,0.1\n2,2,2,0.7\n3,2,1,0.2\n"
        );
    }
}
