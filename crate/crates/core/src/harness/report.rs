//! Report types and their on-disk form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GroupStats;
use crate::error::Result;
use crate::extrapolation::BetaBounds;
use crate::metrics::EvalReport;
use crate::model::Checkpoint;
use crate::pseudoattr::SplitQuality;
use crate::rng::Stream;

use super::config::{AttributeMode, RunConfig};
use super::train::{EpochLog, TrainOutcome};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamId {
    pub name: String,
    pub id: u64,
}

/// Where every random number of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub base_seed: u64,
    /// Grid cell index, when the run is one cell of a grid.
    pub cell: Option<usize>,
    /// Seed of the init and sampler streams of this run.
    pub run_seed: u64,
    /// Seed of the synthetic data streams, when the data is synthetic.
    pub data_seed: Option<u64>,
    pub streams: Vec<StreamId>,
}

impl SeedLineage {
    fn build(config: &RunConfig, cell: Option<usize>, run_seed: u64) -> Self {
        let data_seed = match &config.dataset {
            super::config::DatasetSource::Synthetic(s) => Some(s.spec.seed),
            super::config::DatasetSource::Csv(_) => None,
        };
        let streams = [
            Stream::Data,
            Stream::ValData,
            Stream::TestData,
            Stream::Split,
            Stream::Init,
            Stream::SamplerBiased,
            Stream::SamplerLessBiased,
            Stream::Auxiliary,
        ]
        .into_iter()
        .map(|s| StreamId {
            name: s.name().into(),
            id: s.id(),
        })
        .collect();
        Self {
            base_seed: config.seed,
            cell,
            run_seed,
            data_seed,
            streams,
        }
    }

    pub fn single(config: &RunConfig) -> Self {
        Self::build(config, None, config.seed)
    }

    pub fn cell(config: &RunConfig, index: usize, run_seed: u64) -> Self {
        Self::build(config, Some(index), run_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummary {
    pub t: f64,
    pub sizes: Vec<[usize; 2]>,
    pub pseudo_alpha: Vec<Vec<f64>>,
    /// Against the true training attributes, when those exist.
    pub quality: Option<SplitQuality>,
    pub auxiliary_val_cba: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub seeds: SeedLineage,
    pub attribute_mode: AttributeMode,
    /// True training-group statistics, when true attributes exist.
    pub true_stats: Option<GroupStats>,
    /// Statistics of the grouping used for sampling (true or pseudo).
    pub train_stats: GroupStats,
    pub c: f64,
    pub beta: f64,
    pub p_ext: Vec<Vec<f64>>,
    pub beta_bounds: BetaBounds,
    pub epochs: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub val: EvalReport,
    pub test: EvalReport,
    pub pseudo: Option<PseudoSummary>,
    pub checkpoint: Checkpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunReport {
    pub fn new(
        config: RunConfig,
        seeds: SeedLineage,
        true_stats: Option<GroupStats>,
        outcome: TrainOutcome,
        val: EvalReport,
        test: EvalReport,
        pseudo: Option<PseudoSummary>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            attribute_mode: config.attribute_mode,
            config,
            seeds,
            true_stats,
            train_stats: outcome.stats,
            c: outcome.plan.c,
            beta: outcome.plan.beta,
            p_ext: outcome.plan.p_ext,
            beta_bounds: outcome.plan.beta_bounds,
            epochs: outcome.epochs,
            selected_epoch: outcome.selected_epoch,
            val,
            test,
            pseudo,
            checkpoint: Checkpoint::from_model(&outcome.model),
            wall_clock_ms: None,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Per-epoch curves: losses and validation metrics.
pub fn write_curves_csv(epochs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "epoch",
        "loss_b",
        "loss_lb",
        "loss_ext",
        "val_accuracy",
        "val_cba",
        "val_worst_class",
        "val_gba",
        "val_wga",
    ])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss_b.to_string(),
            e.loss_lb.to_string(),
            e.loss_ext.to_string(),
            e.val.accuracy.to_string(),
            e.val.cba.to_string(),
            e.val.worst_class_accuracy.to_string(),
            opt(e.val.gba),
            opt(e.val.wga),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `curves.csv` and `model.json` into `dir`.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(report, dir.join("report.json"))?;
    write_curves_csv(&report.epochs, dir.join("curves.csv"))?;
    write_json(&report.checkpoint, dir.join("model.json"))?;
    Ok(())
}

/// Appends one line to `w`; used by the CLI summaries.
pub fn summary_line(w: &mut impl Write, report: &RunReport) -> std::io::Result<()> {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{:.4}", v));
    writeln!(
        w,
        "c={} beta={} epoch={} test: acc={:.4} gba={} wga={} worst_class={:.4}",
        report.c,
        report.beta,
        report.selected_epoch,
        report.test.accuracy,
        fmt(report.test.gba),
        fmt(report.test.wga),
        report.test.worst_class_accuracy,
    )
}
