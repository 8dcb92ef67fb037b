//! Exhaustive search over `(t, c, beta)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::compute_group_stats;
use crate::error::{GerneError, Result};
use crate::extrapolation::{beta_bounds_full, beta_bounds_simplified, default_beta_grid};
use crate::pseudoattr::assign_pseudo_attributes;
use crate::rng::cell_seed;

use super::config::{BetaChoice, RunConfig};
use super::data::Context;
use super::report::{RunReport, SeedLineage, SCHEMA_VERSION};
use super::train::run_cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Infeasible,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub t: Option<f64>,
    pub c: f64,
    pub beta: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
    /// Epoch at which the loss became non-finite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_epoch: Option<usize>,
    /// Validation score of the selected checkpoint.
    pub val_score: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub test_accuracy: Option<f64>,
    pub test_gba: Option<f64>,
    pub test_wga: Option<f64>,
    pub test_worst_class: Option<f64>,
    /// Mean pseudo-minority precision against true attributes.
    pub pseudo_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub cells: Vec<GridCell>,
    /// Index of the winning cell; ties go to the earlier cell.
    pub best_index: Option<usize>,
    pub best: Option<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl GridReport {
    pub fn any_diverged(&self) -> bool {
        self.cells.iter().any(|c| c.status == CellStatus::Diverged)
    }

    /// Earliest divergence epoch over all cells.
    pub fn first_divergence(&self) -> Option<usize> {
        self.cells.iter().filter_map(|c| c.diverged_epoch).min()
    }
}

/// `(t, c, beta)` triples in cell order: `t` outermost, then `c`, then
/// `beta`. With `beta: "auto"` the beta list spans `[-1, hi]` where `hi`
/// is the simplified upper bound with known attributes and the full upper
/// bound of the pseudo-group statistics otherwise.
pub fn enumerate_cells(ctx: &Context, config: &RunConfig) -> Result<Vec<(Option<f64>, f64, f64)>> {
    let ts: Vec<Option<f64>> = if config.attribute_mode.is_unknown() {
        config.t_values().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut cells = Vec::new();
    for t in ts {
        let stats = match t {
            None => compute_group_stats(&ctx.train)?,
            Some(t) => {
                let (aux, _) = ctx
                    .auxiliary
                    .as_ref()
                    .ok_or_else(|| GerneError::InvalidConfig("auxiliary model missing".into()))?;
                let grouping = assign_pseudo_attributes(aux, &ctx.train, t)?;
                compute_group_stats(&ctx.train.with_pseudo_attributes(&grouping)?)?
            }
        };
        for c in config.c_values() {
            let betas = match &config.beta {
                BetaChoice::One(b) => vec![*b],
                BetaChoice::Many(v) => v.clone(),
                BetaChoice::Auto(_) => {
                    let hi = if t.is_some() {
                        beta_bounds_full(&stats, c)?.hi
                    } else {
                        beta_bounds_simplified(&stats, c)?.1
                    };
                    default_beta_grid(-1.0, hi, c, config.beta_grid_points)
                }
            };
            cells.extend(betas.into_iter().map(|b| (t, c, b)));
        }
    }
    Ok(cells)
}

/// Runs every cell in parallel, each with the seed `cell_seed(seed, index)`.
/// Failed cells are recorded, not propagated.
pub fn run_grid_search(ctx: &Context, config: &RunConfig) -> Result<GridReport> {
    config.validate()?;
    let cells = enumerate_cells(ctx, config)?;
    let results: Vec<(GridCell, Option<RunReport>)> = cells
        .par_iter()
        .enumerate()
        .map(|(index, &(t, c, beta))| {
            let seed = cell_seed(config.seed, index);
            let lineage = SeedLineage::cell(config, index, seed);
            let mut cell = GridCell {
                index,
                t,
                c,
                beta,
                seed,
                status: CellStatus::Ok,
                error: None,
                diverged_epoch: None,
                val_score: None,
                selected_epoch: None,
                test_accuracy: None,
                test_gba: None,
                test_wga: None,
                test_worst_class: None,
                pseudo_precision: None,
            };
            match run_cell(ctx, config, t, c, beta, lineage) {
                Ok(report) => {
                    cell.val_score = config.selection.score(&report.val);
                    cell.selected_epoch = Some(report.selected_epoch);
                    cell.test_accuracy = Some(report.test.accuracy);
                    cell.test_gba = report.test.gba;
                    cell.test_wga = report.test.wga;
                    cell.test_worst_class = Some(report.test.worst_class_accuracy);
                    cell.pseudo_precision = report
                        .pseudo
                        .as_ref()
                        .and_then(|p| p.quality.as_ref())
                        .map(|q| q.mean_precision);
                    (cell, Some(report))
                }
                Err(e) => {
                    log::warn!("grid cell {index} (t={t:?}, c={c}, beta={beta}) failed: {e}");
                    if let GerneError::Divergence { epoch } = e {
                        cell.diverged_epoch = Some(epoch);
                    }
                    cell.status = match e {
                        GerneError::InfeasibleBeta { .. } => CellStatus::Infeasible,
                        GerneError::Divergence { .. } | GerneError::NonFiniteLoss => CellStatus::Diverged,
                        _ => CellStatus::Failed,
                    };
                    cell.error = Some(e.to_string());
                    (cell, None)
                }
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (cell, _) in &results {
        if let Some(score) = cell.val_score {
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((cell.index, score));
            }
        }
    }
    let best_index = best.map(|(i, _)| i);
    let mut best_report = None;
    let mut table = Vec::with_capacity(results.len());
    for (cell, report) in results {
        if Some(cell.index) == best_index {
            best_report = report;
        }
        table.push(cell);
    }
    Ok(GridReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        cells: table,
        best_index,
        best: best_report,
        wall_clock_ms: None,
    })
}
