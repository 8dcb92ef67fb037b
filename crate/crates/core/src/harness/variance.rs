//! Variance of the extrapolated loss against the SW comparator at frozen
//! parameters whose minority loss is near zero.

use serde::{Deserialize, Serialize};

use crate::dataset::{compute_group_stats, generate_synthetic, GroupStats, GroupedDataset};
use crate::error::{GerneError, Result};
use crate::extrapolation::extrapolated_loss;
use crate::model::{sgd_step, Architecture, Model, OptimizerSettings, OptimizerState};
use crate::pseudoattr::minority_mask;
use crate::rng::{self, Stream};
use crate::sampling::{sample_biased_batch, sample_less_biased_shared, sample_sw_batch, sw_weight};

use super::config::VarianceConfig;
use super::report::SCHEMA_VERSION;

/// Sample variance with its standard error `sqrt((m4 - s^4) / M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

impl VarianceEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
        let std_error = ((m4 - variance * variance).max(0.0) / m).sqrt();
        Self {
            mean,
            variance,
            std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub beta: f64,
    /// Majority weight of the SW comparator.
    pub sw_weight: f64,
    pub ext: VarianceEstimate,
    pub sw: VarianceEstimate,
    /// `((1 + beta) * sqrt(1 - c/2) - beta)^2`.
    pub bound_factor: f64,
    /// `bound_factor * Var(L_A)`.
    pub lower_bound: f64,
    /// Combined standard error of `Var(L_ext) - lower_bound`.
    pub bound_std_error: f64,
    /// `Var(L_ext) >= lower_bound - 3 * bound_std_error`.
    pub bound_holds: bool,
    pub sw_over_a: f64,
    pub ext_over_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub schema_version: u32,
    pub config: VarianceConfig,
    pub fit_steps: usize,
    pub minority_loss: f64,
    /// Variance of the class-balanced loss of majority-only batches.
    pub majority: VarianceEstimate,
    pub rows: Vec<VarianceRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

fn minority_subset(ds: &GroupedDataset, stats: &GroupStats, minority: bool) -> Result<GroupedDataset> {
    let mask = minority_mask(stats);
    let attrs = ds.true_attributes().ok_or(GerneError::HiddenAttributes)?;
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| mask[ds.labels()[i]][attrs[i]] == minority)
        .collect();
    ds.subset(&idx)
}

/// Full-batch gradient descent from zero on the minority samples only,
/// until their mean loss drops below `target`.
pub fn fit_minority(ds: &GroupedDataset, stats: &GroupStats, target: f64, max_steps: usize) -> Result<(Model, usize, f64)> {
    let minority = minority_subset(ds, stats, true)?;
    let arch = Architecture::linear(ds.dim(), ds.num_classes());
    let mut model = Model::from_parameters(arch.clone(), vec![0.0; arch.num_parameters()])?;
    let settings = OptimizerSettings {
        learning_rate: 0.5,
        momentum: 0.9,
        weight_decay: 0.0,
    };
    let mut opt = OptimizerState::new(settings, arch.num_parameters())?;
    for step in 0..max_steps {
        let (loss, grad) = model.batch_gradient(minority.features(), minority.labels(), None)?;
        if loss < target {
            return Ok((model, step, loss));
        }
        sgd_step(&mut model, &mut opt, &grad);
    }
    let loss = model.batch_loss(minority.features(), minority.labels(), None)?;
    if loss < target {
        return Ok((model, max_steps, loss));
    }
    Err(GerneError::Degenerate(format!(
        "minority loss {loss} still above {target} after {max_steps} steps"
    )))
}

/// Draws `L_ext` (shared-sample mode), `L_sw` and the majority-only loss
/// `L_A` `draws` times each at frozen parameters.
pub fn run_variance_probe(config: &VarianceConfig) -> Result<VarianceReport> {
    let spec = &config.dataset;
    if spec.num_classes != 2 || spec.num_attributes != 2 {
        return Err(GerneError::InvalidConfig("the variance probe needs K = A = 2".into()));
    }
    if config.draws < 2 {
        return Err(GerneError::InvalidConfig("draws must be >= 2".into()));
    }
    let c = config.c;
    let betas = config.betas();
    for &b in &betas {
        let w = sw_weight(c, b);
        if !(0.0..=1.0).contains(&w) {
            return Err(GerneError::InvalidConfig(format!(
                "beta = {b} gives SW weight {w} outside [0, 1]"
            )));
        }
    }
    let ds = generate_synthetic(spec)?;
    let stats = compute_group_stats(&ds)?;
    let (model, fit_steps, minority_loss) =
        fit_minority(&ds, &stats, config.minority_loss_target, config.max_fit_steps)?;
    let majority_ds = minority_subset(&ds, &stats, false)?;
    let per_class = config.batch_size_per_class;
    let mut rng = rng::stream(config.seed, Stream::Probe);

    let mut loss_a = Vec::with_capacity(config.draws);
    for _ in 0..config.draws {
        let batch = sample_biased_batch(&majority_ds, per_class, &mut rng)?;
        loss_a.push(model.batch_loss(batch.features.view(), &batch.labels, None)?);
    }
    let majority = VarianceEstimate::from_samples(&loss_a);

    let mut rows = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let mut ext = Vec::with_capacity(config.draws);
        let mut sw = Vec::with_capacity(config.draws);
        for _ in 0..config.draws {
            let b = sample_biased_batch(&ds, per_class, &mut rng)?;
            let lb = sample_less_biased_shared(&ds, &stats, c, &b, &mut rng)?;
            let loss_b = model.batch_loss(b.features.view(), &b.labels, None)?;
            let loss_lb = model.batch_loss(lb.features.view(), &lb.labels, None)?;
            ext.push(extrapolated_loss(loss_lb, loss_b, beta));
            let s = sample_sw_batch(&ds, &stats, c, beta, per_class, &mut rng)?;
            sw.push(model.batch_loss(s.features.view(), &s.labels, s.weights.as_deref())?);
        }
        let ext = VarianceEstimate::from_samples(&ext);
        let sw = VarianceEstimate::from_samples(&sw);
        let bound_factor = ((1.0 + beta) * (1.0 - c / 2.0).sqrt() - beta).powi(2);
        let lower_bound = bound_factor * majority.variance;
        let bound_std_error = (ext.std_error.powi(2) + (bound_factor * majority.std_error).powi(2)).sqrt();
        rows.push(VarianceRow {
            beta,
            sw_weight: sw_weight(c, beta),
            bound_factor,
            lower_bound,
            bound_std_error,
            bound_holds: ext.variance >= lower_bound - 3.0 * bound_std_error,
            sw_over_a: sw.variance / majority.variance,
            ext_over_a: ext.variance / majority.variance,
            ext,
            sw,
        });
    }
    Ok(VarianceReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        fit_steps,
        minority_loss,
        majority,
        rows,
        wall_clock_ms: None,
    })
}

pub fn write_variance_csv(report: &VarianceReport, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "beta",
        "sw_weight",
        "var_ext",
        "se_ext",
        "var_sw",
        "se_sw",
        "var_a",
        "lower_bound",
        "bound_holds",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.beta.to_string(),
            r.sw_weight.to_string(),
            r.ext.variance.to_string(),
            r.ext.std_error.to_string(),
            r.sw.variance.to_string(),
            r.sw.std_error.to_string(),
            report.majority.variance.to_string(),
            r.lower_bound.to_string(),
            r.bound_holds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
