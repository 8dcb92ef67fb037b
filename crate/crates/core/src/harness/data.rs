//! Loading the train/val/test splits a run needs.

use crate::dataset::{
    compute_group_stats, generate_synthetic, generate_synthetic_from, load_csv, load_csv_with_shape, split,
    GroupStats, GroupedDataset, SyntheticSpec,
};
use crate::error::{GerneError, Result};
use crate::model::Model;
use crate::pseudoattr::{minority_mask, train_biased_model, AuxiliaryParams};
use crate::rng::Stream;

use super::config::{AttributeMode, DatasetSource, RunConfig, SyntheticSource};
use super::train::TrainParams;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
}

fn eval_spec(source: &SyntheticSource, n_per_class: usize) -> SyntheticSpec {
    let spec = &source.spec;
    let alpha_target = source.eval_alpha.clone().unwrap_or_else(|| {
        vec![vec![1.0 / spec.num_attributes as f64; spec.num_attributes]; spec.num_classes]
    });
    SyntheticSpec {
        alpha_target,
        n_per_class,
        ..spec.clone()
    }
}

/// Training set from the data stream; validation and test sets from their
/// own streams with `eval_alpha` group ratios (uniform by default).
pub fn synthetic_splits(source: &SyntheticSource) -> Result<Splits> {
    Ok(Splits {
        train: generate_synthetic(&source.spec)?,
        val: generate_synthetic_from(&eval_spec(source, source.n_val_per_class), Stream::ValData)?,
        test: generate_synthetic_from(&eval_spec(source, source.n_test_per_class), Stream::TestData)?,
    })
}

/// Splits as described by the config. Training attributes are visible only
/// in `known` mode; evaluation sets keep whatever attributes they have.
pub fn load_splits(config: &RunConfig) -> Result<Splits> {
    let known = config.attribute_mode == AttributeMode::Known;
    let splits = match &config.dataset {
        DatasetSource::Synthetic(source) => synthetic_splits(source)?,
        DatasetSource::Csv(source) => {
            let train_all = load_csv(&source.train, known)?;
            let (k, a) = (train_all.num_classes(), train_all.num_attributes());
            let load_eval = |p: &std::path::Path| load_csv_with_shape(p, false, Some(k), Some(a));
            match (&source.val, &source.test) {
                (Some(v), Some(t)) => Splits {
                    train: train_all,
                    val: load_eval(v)?,
                    test: load_eval(t)?,
                },
                (v, t) => {
                    let (train, val, test) = split(&train_all, source.split, config.seed)?;
                    Splits {
                        train,
                        val: match v {
                            Some(v) => load_eval(v)?,
                            None => val,
                        },
                        test: match t {
                            Some(t) => load_eval(t)?,
                            None => test,
                        },
                    }
                }
            }
        }
    };
    if splits.val.num_classes() != splits.train.num_classes() || splits.val.dim() != splits.train.dim() {
        return Err(GerneError::InvalidConfig("validation set shape differs from training set".into()));
    }
    if splits.test.num_classes() != splits.train.num_classes() || splits.test.dim() != splits.train.dim() {
        return Err(GerneError::InvalidConfig("test set shape differs from training set".into()));
    }
    Ok(splits)
}

/// Everything shared by the cells of a grid: the data, the minority mask
/// derived from the true training statistics, and in unknown-attribute
/// modes the auxiliary biased model with its validation CBA.
#[derive(Debug, Clone)]
pub struct Context {
    pub train: GroupedDataset,
    /// Validation set as seen by model selection.
    pub val: GroupedDataset,
    pub test: GroupedDataset,
    pub true_stats: Option<GroupStats>,
    pub minority: Option<Vec<Vec<bool>>>,
    pub auxiliary: Option<(Model, f64)>,
}

impl Context {
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        let splits = load_splits(config)?;
        Self::from_splits(config, splits)
    }

    pub fn from_splits(config: &RunConfig, splits: Splits) -> Result<Self> {
        let Splits { train, val, test } = splits;
        let true_stats = train.true_group_index().and_then(|index| {
            GroupStats::from_sizes(
                index
                    .iter()
                    .map(|row| row.iter().map(Vec::len).collect())
                    .collect(),
            )
            .ok()
        });
        let minority = true_stats.as_ref().map(minority_mask);
        let (train, val) = match config.attribute_mode {
            AttributeMode::Known => {
                compute_group_stats(&train)?;
                (train, val)
            }
            AttributeMode::UnknownTrain => (train.hide_attributes(), val),
            AttributeMode::UnknownAll => (train.hide_attributes(), val.without_attributes()),
        };
        let auxiliary = if config.attribute_mode.is_unknown() {
            let c = config.c_values()[0];
            let mut params = AuxiliaryParams::derived_from(&TrainParams::from_config(config, c, 0.0));
            if let Some(e) = config.auxiliary.epochs {
                params.epochs = e;
            }
            if let Some(s) = config.auxiliary.steps_per_epoch {
                params.steps_per_epoch = s;
            }
            Some(train_biased_model(&train, &val, &params, config.seed)?)
        } else {
            None
        };
        Ok(Self {
            train,
            val,
            test,
            true_stats,
            minority,
            auxiliary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_eval_sets_are_uniform_and_independent() {
        let source = SyntheticSource {
            spec: SyntheticSpec::aligned(2, 0.01, 500, 6, 3),
            n_val_per_class: 100,
            n_test_per_class: 60,
            eval_alpha: None,
        };
        let s = synthetic_splits(&source).unwrap();
        let val_stats = compute_group_stats(&s.val).unwrap();
        assert_eq!(val_stats.group_sizes, vec![vec![50, 50], vec![50, 50]]);
        assert_eq!(s.test.len(), 120);
        assert_ne!(s.val.row(0), s.test.row(0));
        assert_ne!(s.train.row(0), s.val.row(0));
    }
}
