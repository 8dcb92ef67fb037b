//! The extrapolated training loop and single-run orchestration.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_group_stats, GroupStats, GroupedDataset};
use crate::error::{GerneError, Result};
use crate::extrapolation::{extrapolated_gradient, extrapolated_loss, ExtrapolationPlan};
use crate::metrics::{evaluate_with_minority, EvalReport, SelectionStrategy};
use crate::model::{init_model, sgd_step, Architecture, Model, OptimizerSettings, OptimizerState};
use crate::pseudoattr::run_unknown_attribute_training;
use crate::rng::{self, Stream};
use crate::sampling::{sample_biased_batch, sample_less_biased_batch, sample_less_biased_shared};

use super::config::{BetaChoice, RunConfig};
use super::data::Context;
use super::report::{PseudoSummary, RunReport, SeedLineage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerSettings,
    pub per_class: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub c: f64,
    pub beta: f64,
    pub shared_samples: bool,
    pub selection: SelectionStrategy,
}

impl TrainParams {
    pub fn from_config(config: &RunConfig, c: f64, beta: f64) -> Self {
        Self {
            hidden: config.architecture.hidden.clone(),
            optimizer: config.optimizer,
            per_class: config.batch_size_per_class,
            epochs: config.epochs,
            steps_per_epoch: config.steps_per_epoch,
            c,
            beta,
            shared_samples: config.shared_samples,
            selection: config.selection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub loss_b: f64,
    pub loss_lb: f64,
    pub loss_ext: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Means over the epoch's steps.
    pub loss_b: f64,
    pub loss_lb: f64,
    pub loss_ext: f64,
    pub val: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint picked by the selection strategy.
    pub model: Model,
    pub final_model: Model,
    pub epochs: Vec<EpochLog>,
    /// 1-based.
    pub selected_epoch: usize,
    pub plan: ExtrapolationPlan,
    pub stats: GroupStats,
}

/// Step-by-step extrapolated SGD over the active grouping of `train`.
///
/// Streams: `init` for the parameters, `sampler-b` for biased batches and
/// `sampler-lb` for less biased ones, so the biased batch sequence does not
/// depend on `c` or `beta`.
pub struct Trainer<'a> {
    train: &'a GroupedDataset,
    params: TrainParams,
    stats: GroupStats,
    plan: ExtrapolationPlan,
    model: Model,
    opt: OptimizerState,
    rng_b: ChaCha8Rng,
    rng_lb: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a GroupedDataset, params: &TrainParams, seed: u64) -> Result<Self> {
        let stats = compute_group_stats(train)?;
        let plan = ExtrapolationPlan::new(&stats, params.c, params.beta)?;
        let arch = Architecture::mlp(train.dim(), &params.hidden, train.num_classes());
        let model = init_model(&arch, &mut rng::stream(seed, Stream::Init))?;
        let opt = OptimizerState::new(params.optimizer, arch.num_parameters())?;
        Ok(Self {
            train,
            params: params.clone(),
            stats,
            plan,
            model,
            opt,
            rng_b: rng::stream(seed, Stream::SamplerBiased),
            rng_lb: rng::stream(seed, Stream::SamplerLessBiased),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn plan(&self) -> &ExtrapolationPlan {
        &self.plan
    }

    pub fn stats(&self) -> &GroupStats {
        &self.stats
    }

    /// One update; `NonFiniteLoss` when the loss or gradient blows up.
    pub fn step(&mut self) -> Result<StepLosses> {
        let p = &self.params;
        let biased = sample_biased_batch(self.train, p.per_class, &mut self.rng_b)?;
        let less_biased = if p.shared_samples {
            sample_less_biased_shared(self.train, &self.stats, p.c, &biased, &mut self.rng_lb)?
        } else {
            sample_less_biased_batch(self.train, &self.stats, p.c, p.per_class, &mut self.rng_lb)?
        };
        let (loss_b, grad_b) = self.model.batch_gradient(biased.features.view(), &biased.labels, None)?;
        let (loss_lb, grad_lb) =
            self.model
                .batch_gradient(less_biased.features.view(), &less_biased.labels, None)?;
        let grad = extrapolated_gradient(&grad_lb, &grad_b, p.beta);
        let loss_ext = extrapolated_loss(loss_lb, loss_b, p.beta);
        if !loss_ext.is_finite() || !grad.is_finite() {
            return Err(GerneError::NonFiniteLoss);
        }
        sgd_step(&mut self.model, &mut self.opt, &grad);
        if self.model.parameters().iter().any(|v| !v.is_finite()) {
            return Err(GerneError::NonFiniteLoss);
        }
        Ok(StepLosses {
            loss_b,
            loss_lb,
            loss_ext,
        })
    }
}

/// Trains with the extrapolated gradient, evaluating on `val` after every
/// epoch. Non-finite losses abort with [`GerneError::Divergence`].
pub fn train_extrapolated(
    train: &GroupedDataset,
    val: &GroupedDataset,
    params: &TrainParams,
    seed: u64,
    minority: Option<&[Vec<bool>]>,
) -> Result<TrainOutcome> {
    if params.selection.needs_validation_attributes() && val.true_attributes().is_none() {
        return Err(GerneError::InvalidConfig(format!(
            "selection {:?} needs validation attributes",
            params.selection
        )));
    }
    if params.epochs == 0 || params.steps_per_epoch == 0 {
        return Err(GerneError::InvalidConfig("epochs and steps_per_epoch must be >= 1".into()));
    }
    let mut trainer = Trainer::new(train, params, seed)?;
    let mut epochs = Vec::with_capacity(params.epochs);
    let mut best: Option<(Model, usize, f64)> = None;
    for epoch in 1..=params.epochs {
        let mut sums = [0.0; 3];
        for _ in 0..params.steps_per_epoch {
            let s = trainer.step().map_err(|e| match e {
                GerneError::NonFiniteLoss => GerneError::Divergence { epoch },
                other => other,
            })?;
            sums[0] += s.loss_b;
            sums[1] += s.loss_lb;
            sums[2] += s.loss_ext;
        }
        let n = params.steps_per_epoch as f64;
        let report = evaluate_with_minority(trainer.model(), val, minority)?;
        let score = params.selection.score(&report).ok_or_else(|| {
            GerneError::InvalidConfig(format!("validation report lacks {:?}", params.selection))
        })?;
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((trainer.model().clone(), epoch, score));
        }
        epochs.push(EpochLog {
            epoch,
            loss_b: sums[0] / n,
            loss_lb: sums[1] / n,
            loss_ext: sums[2] / n,
            val: report,
        });
    }
    let (model, selected_epoch, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        final_model: trainer.model().clone(),
        epochs,
        selected_epoch,
        plan: trainer.plan().clone(),
        stats: trainer.stats().clone(),
    })
}

/// One `(t, c, beta)` run on prepared data.
pub fn run_cell(
    ctx: &Context,
    config: &RunConfig,
    t: Option<f64>,
    c: f64,
    beta: f64,
    seeds: SeedLineage,
) -> Result<RunReport> {
    let params = TrainParams::from_config(config, c, beta);
    let minority = ctx.minority.as_deref();
    let (outcome, pseudo) = if config.attribute_mode.is_unknown() {
        let t = t.ok_or_else(|| GerneError::InvalidConfig("unknown-attribute run needs t".into()))?;
        let (aux, aux_cba) = ctx
            .auxiliary
            .as_ref()
            .ok_or_else(|| GerneError::InvalidConfig("auxiliary model missing".into()))?;
        let run = run_unknown_attribute_training(&ctx.train, &ctx.val, aux, t, &params, seeds.run_seed, minority)?;
        let summary = PseudoSummary {
            t,
            sizes: run.grouping.sizes.clone(),
            pseudo_alpha: run.pseudo_stats.alpha.clone(),
            quality: run.quality.clone(),
            auxiliary_val_cba: *aux_cba,
        };
        (run.outcome, Some(summary))
    } else {
        (train_extrapolated(&ctx.train, &ctx.val, &params, seeds.run_seed, minority)?, None)
    };
    let val = outcome.epochs[outcome.selected_epoch - 1].val.clone();
    let test = evaluate_with_minority(&outcome.model, &ctx.test, minority)?;
    Ok(RunReport::new(config.clone(), seeds, ctx.true_stats.clone(), outcome, val, test, pseudo))
}

/// A single training run; `c`, `beta` (and `t` in unknown-attribute modes)
/// must be single values.
pub fn run_training(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let single = |name: &str, values: Vec<f64>| -> Result<f64> {
        match values.as_slice() {
            [v] => Ok(*v),
            _ => Err(GerneError::InvalidConfig(format!(
                "`{name}` must be a single value for a training run; use a grid search"
            ))),
        }
    };
    let c = single("c", config.c_values())?;
    let beta = match &config.beta {
        BetaChoice::One(b) => *b,
        BetaChoice::Many(v) => single("beta", v.clone())?,
        BetaChoice::Auto(_) => {
            return Err(GerneError::InvalidConfig(
                "`beta: \"auto\"` needs a grid search".into(),
            ))
        }
    };
    let t = if config.attribute_mode.is_unknown() {
        Some(single("t", config.t_values())?)
    } else {
        None
    };
    let ctx = Context::prepare(config)?;
    run_cell(&ctx, config, t, c, beta, SeedLineage::single(config))
}
