use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::error::{GerneError, Result};
use crate::metrics::SelectionStrategy;
use crate::model::OptimizerSettings;

/// One value or a list of values to search over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// Extrapolation factor: a value, a list, or `"auto"` for the default grid
/// over the feasible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaChoice {
    Auto(Auto),
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeMode {
    /// Training and validation attributes known.
    #[default]
    Known,
    /// Training attributes unknown, validation attributes known.
    UnknownTrain,
    /// Attributes unknown in training and validation.
    UnknownAll,
}

impl AttributeMode {
    pub fn is_unknown(self) -> bool {
        self != AttributeMode::Known
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    pub n_val_per_class: usize,
    pub n_test_per_class: usize,
    /// Group ratios of the validation and test sets; uniform when absent.
    #[serde(default)]
    pub eval_alpha: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub train: PathBuf,
    #[serde(default)]
    pub val: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Train/val/test fractions used when `val` or `test` is missing.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
}

/// Overrides for the auxiliary biased model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuxiliaryConfig {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub attribute_mode: AttributeMode,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    pub optimizer: OptimizerSettings,
    pub batch_size_per_class: usize,
    pub epochs: usize,
    #[serde(default = "one")]
    pub steps_per_epoch: usize,
    pub c: OneOrMany,
    pub beta: BetaChoice,
    /// Pseudo-attribute threshold(s); unknown-attribute modes only.
    #[serde(default)]
    pub t: Option<OneOrMany>,
    pub selection: SelectionStrategy,
    #[serde(default)]
    pub seed: u64,
    /// Build the less biased batch from the biased one.
    #[serde(default)]
    pub shared_samples: bool,
    #[serde(default = "default_grid_points")]
    pub beta_grid_points: usize,
    #[serde(default)]
    pub auxiliary: AuxiliaryConfig,
}

fn one() -> usize {
    1
}

fn default_grid_points() -> usize {
    20
}

/// Pseudo-attribute thresholds searched when none are configured.
pub const DEFAULT_T_GRID: [f64; 5] = [5e-4, 1e-3, 3e-3, 1e-2, 3e-2];

/// Extra thresholds appended in `unknown_all` mode, where `t` may go up to 1/2.
pub const EXTENDED_T_GRID: [f64; 4] = [0.1, 0.2, 0.3, 0.5];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn c_values(&self) -> Vec<f64> {
        self.c.values()
    }

    pub fn t_values(&self) -> Vec<f64> {
        match &self.t {
            Some(t) => t.values(),
            None if self.attribute_mode == AttributeMode::UnknownAll => {
                DEFAULT_T_GRID.iter().chain(&EXTENDED_T_GRID).copied().collect()
            }
            None => DEFAULT_T_GRID.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GerneError::InvalidConfig(m));
        self.optimizer.validate()?;
        if self.batch_size_per_class == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("batch_size_per_class, epochs and steps_per_epoch must be >= 1".into());
        }
        let cs = self.c_values();
        if cs.is_empty() {
            return bad("c grid is empty".into());
        }
        if let Some(c) = cs.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
            return bad(format!("c = {c} must lie in (0, 1]"));
        }
        match &self.beta {
            BetaChoice::Many(v) if v.is_empty() => return bad("beta grid is empty".into()),
            BetaChoice::One(b) if !b.is_finite() => return bad("beta must be finite".into()),
            BetaChoice::Many(v) if v.iter().any(|b| !b.is_finite()) => {
                return bad("beta must be finite".into())
            }
            BetaChoice::Auto(_) if self.beta_grid_points == 0 => {
                return bad("beta_grid_points must be >= 1".into())
            }
            _ => {}
        }
        if self.attribute_mode.is_unknown() {
            let ts = self.t_values();
            if ts.is_empty() {
                return bad("t grid is empty".into());
            }
            if let Some(t) = ts.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
                return bad(format!("t = {t} must lie in (0, 1)"));
            }
            if self.attribute_mode == AttributeMode::UnknownAll && ts.iter().any(|&t| t > 0.5) {
                return bad("t must not exceed 1/2 when validation attributes are unknown".into());
            }
        }
        if self.attribute_mode == AttributeMode::UnknownAll && self.selection.needs_validation_attributes() {
            return bad(format!(
                "selection {:?} needs validation attributes, which unknown_all hides",
                self.selection
            ));
        }
        if self.architecture.hidden.len() > 2 {
            return bad("at most two hidden layers are supported".into());
        }
        Ok(())
    }
}

/// Variance probe settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    /// Must be `K = A = 2`.
    pub dataset: SyntheticSpec,
    pub c: f64,
    /// Defaults to five points from `(1 - c)/c` to `(2 - c)/c`.
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_probe_batch")]
    pub batch_size_per_class: usize,
    /// The frozen parameters are fitted until the mean minority loss drops
    /// below this value.
    #[serde(default = "default_minority_target")]
    pub minority_loss_target: f64,
    #[serde(default = "default_fit_steps")]
    pub max_fit_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_draws() -> usize {
    10_000
}

fn default_probe_batch() -> usize {
    100
}

fn default_minority_target() -> f64 {
    1e-3
}

fn default_fit_steps() -> usize {
    20_000
}

impl VarianceConfig {
    pub fn betas(&self) -> Vec<f64> {
        match &self.betas {
            Some(b) => b.clone(),
            None => {
                let lo = (1.0 - self.c) / self.c;
                let hi = (2.0 - self.c) / self.c;
                (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
            }
        }
    }
}
