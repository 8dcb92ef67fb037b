//! Built-in oracle checks runnable from the CLI.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_group_stats, generate_synthetic, GroupStats, SyntheticSpec};
use crate::error::Result;
use crate::extrapolation::{
    beta_bounds_full, beta_target, compute_p_ext, decompose_loss, extrapolated_gradient, extrapolated_loss,
    pseudo_mixture_p_ext,
};
use crate::metrics::SelectionStrategy;
use crate::model::{init_model, sgd_step, Architecture, Model, OptimizerSettings, OptimizerState};
use crate::rng::{self, Stream};
use crate::sampling::{sample_biased_batch, sample_less_biased_batch};

use super::config::VarianceConfig;
use super::report::SCHEMA_VERSION;
use super::train::{TrainParams, Trainer};
use super::variance::run_variance_probe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn check(name: &str, passed: bool, value: f64, tolerance: f64, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        value,
        tolerance,
        detail,
    }
}

fn check_divergence_threshold() -> Result<Check> {
    let sizes = (0..10)
        .map(|y| (0..10).map(|a| if a == y { 1791 } else { 1 }).collect())
        .collect();
    let hi = beta_bounds_full(&GroupStats::from_sizes(sizes)?, 0.5)?.hi;
    let err = (hi - 1.2235).abs();
    Ok(check(
        "beta_upper_bound_ten_groups",
        err <= 1e-3,
        hi,
        1e-3,
        "alpha_max = 0.995, c = 0.5, A = 10".into(),
    ))
}

fn random_stats<R: Rng>(rng: &mut R) -> Result<GroupStats> {
    let k = rng.random_range(1..=4);
    let a = rng.random_range(2..=5);
    let sizes = (0..k)
        .map(|_| (0..a).map(|_| rng.random_range(1..=200)).collect())
        .collect();
    GroupStats::from_sizes(sizes)
}

fn check_bounds_brute_force(seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, Stream::Probe);
    let mut failures = 0usize;
    let trials = 300;
    for _ in 0..trials {
        let stats = random_stats(&mut rng)?;
        let c = rng.random_range(0.05..=1.0);
        let b = beta_bounds_full(&stats, c)?;
        if b.is_unbounded() {
            continue;
        }
        let inside = [b.lo, b.hi, 0.5 * (b.lo + b.hi)];
        failures += inside.iter().filter(|&&beta| compute_p_ext(&stats, c, beta).is_err()).count();
        failures += [b.lo - 1e-3, b.hi + 1e-3]
            .iter()
            .filter(|&&beta| compute_p_ext(&stats, c, beta).is_ok())
            .count();
    }
    Ok(check(
        "beta_bounds_brute_force",
        failures == 0,
        failures as f64,
        0.0,
        format!("{trials} random (stats, c) pairs, endpoints and 1e-3 outside"),
    ))
}

fn fd_extrapolated(model: &Model, xb: &crate::sampling::Batch, xlb: &crate::sampling::Batch, beta: f64) -> Result<Vec<f64>> {
    let eps = 1e-6;
    let mut probe = model.clone();
    let mut out = vec![0.0; model.parameters().len()];
    let loss = |m: &Model| -> Result<f64> {
        Ok(extrapolated_loss(
            m.batch_loss(xlb.features.view(), &xlb.labels, None)?,
            m.batch_loss(xb.features.view(), &xb.labels, None)?,
            beta,
        ))
    };
    for (j, g) in out.iter_mut().enumerate() {
        let orig = probe.parameters()[j];
        probe.parameters_mut()[j] = orig + eps;
        let up = loss(&probe)?;
        probe.parameters_mut()[j] = orig - eps;
        let down = loss(&probe)?;
        probe.parameters_mut()[j] = orig;
        *g = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

fn check_gradients(seed: u64) -> Result<Vec<Check>> {
    let ds = generate_synthetic(&SyntheticSpec::aligned(2, 0.1, 100, 6, seed))?;
    let stats = compute_group_stats(&ds)?;
    let mut rng = rng::stream(seed, Stream::Probe);
    let mut out = Vec::new();
    for (name, hidden) in [("gradient_linear", vec![]), ("gradient_mlp", vec![8])] {
        let arch = Architecture::mlp(ds.dim(), &hidden, 2);
        let model = init_model(&arch, &mut rng)?;
        let b = sample_biased_batch(&ds, 8, &mut rng)?;
        let lb = sample_less_biased_batch(&ds, &stats, 0.5, 8, &mut rng)?;
        let beta = 1.5;
        let (_, gb) = model.batch_gradient(b.features.view(), &b.labels, None)?;
        let (_, glb) = model.batch_gradient(lb.features.view(), &lb.labels, None)?;
        let analytic = extrapolated_gradient(&glb, &gb, beta);
        let fd = fd_extrapolated(&model, &b, &lb, beta)?;
        let num: f64 = analytic.0.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt().max(1e-12);
        let rel = num / den;
        out.push(check(name, rel < 1e-4, rel, 1e-4, format!("hidden = {hidden:?}, beta = {beta}")));
    }
    Ok(out)
}

fn check_loss_decomposition(seed: u64) -> Result<Check> {
    // group sizes and batch size chosen so that every planned count is exact
    let spec = SyntheticSpec {
        alpha_target: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        ..SyntheticSpec::aligned(2, 0.1, 200, 6, seed)
    };
    let ds = generate_synthetic(&spec)?;
    let stats = compute_group_stats(&ds)?;
    let (c, beta, per_class) = (0.5, 1.0, 40);
    let mut rng = rng::stream(seed, Stream::Probe);
    let model = init_model(&Architecture::linear(ds.dim(), 2), &mut rng)?;
    let index = ds.group_index()?;
    let losses = model.per_sample_losses(ds.features(), ds.labels());
    let group_losses: Vec<Vec<f64>> = index
        .iter()
        .map(|row| {
            row.iter()
                .map(|m| m.iter().map(|&i| losses[i]).sum::<f64>() / m.len() as f64)
                .collect()
        })
        .collect();
    let expected = decompose_loss(&group_losses, &compute_p_ext(&stats, c, beta)?, 2)?;
    let draws = 4000;
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let b = sample_biased_batch(&ds, per_class, &mut rng)?;
        let lb = sample_less_biased_batch(&ds, &stats, c, per_class, &mut rng)?;
        xs.push(extrapolated_loss(
            model.batch_loss(lb.features.view(), &lb.labels, None)?,
            model.batch_loss(b.features.view(), &b.labels, None)?,
            beta,
        ));
    }
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    let se = sd / (draws as f64).sqrt();
    let z = (mean - expected).abs() / se;
    Ok(check(
        "loss_decomposition_monte_carlo",
        z <= 3.0,
        z,
        3.0,
        format!("mean {mean:.6} vs {expected:.6} over {draws} batch pairs (|z| shown)"),
    ))
}

fn check_erm_reduction(seed: u64) -> Result<Check> {
    let ds = generate_synthetic(&SyntheticSpec::aligned(2, 0.05, 300, 6, seed))?;
    let params = TrainParams {
        hidden: vec![],
        optimizer: OptimizerSettings {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-3,
        },
        per_class: 16,
        epochs: 1,
        steps_per_epoch: 1,
        c: 0.5,
        beta: -1.0,
        shared_samples: false,
        selection: SelectionStrategy::WgaVal,
    };
    let mut trainer = Trainer::new(&ds, &params, seed)?;
    let arch = Architecture::linear(ds.dim(), 2);
    let mut model = init_model(&arch, &mut rng::stream(seed, Stream::Init))?;
    let mut opt = OptimizerState::new(params.optimizer, arch.num_parameters())?;
    let mut rng_b = rng::stream(seed, Stream::SamplerBiased);
    let steps = 20;
    let mut mismatch = 0usize;
    for _ in 0..steps {
        trainer.step()?;
        let batch = sample_biased_batch(&ds, params.per_class, &mut rng_b)?;
        let (_, grad) = model.batch_gradient(batch.features.view(), &batch.labels, None)?;
        sgd_step(&mut model, &mut opt, &grad);
        let same = trainer
            .model()
            .parameters()
            .iter()
            .zip(model.parameters())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        mismatch += usize::from(!same);
    }
    Ok(check(
        "erm_reduction_bitwise",
        mismatch == 0,
        mismatch as f64,
        0.0,
        format!("{steps} steps at beta = -1"),
    ))
}

fn check_beta_target(seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, Stream::Probe);
    let mut worst: f64 = 0.0;
    let trials = 100;
    let mut done = 0;
    while done < trials {
        let cond = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let a0: f64 = rng.random_range(0.01..0.99);
        let alpha = [a0, 1.0 - a0];
        let c = rng.random_range(0.1..=1.0);
        let target = rng.random_range(-0.5..1.5);
        let Ok(beta) = beta_target(target, &cond, &alpha, c) else {
            continue;
        };
        worst = worst.max((pseudo_mixture_p_ext(&cond, &alpha, c, beta) - target).abs());
        done += 1;
    }
    Ok(check(
        "beta_target_round_trip",
        worst <= 1e-10,
        worst,
        1e-10,
        format!("{trials} random instances, targets inside and outside the vertex range"),
    ))
}

fn check_variance(seed: u64) -> Result<Vec<Check>> {
    let c = 0.5;
    let config = VarianceConfig {
        dataset: SyntheticSpec {
            alpha_target: vec![vec![0.995, 0.005], vec![0.005, 0.995]],
            ..SyntheticSpec::aligned(2, 0.005, 2000, 6, seed)
        },
        c,
        betas: Some(vec![(2.0 - c) / c]),
        draws: 2000,
        batch_size_per_class: 100,
        minority_loss_target: 1e-3,
        max_fit_steps: 20_000,
        seed,
    };
    let report = run_variance_probe(&config)?;
    let row = &report.rows[0];
    Ok(vec![
        check(
            "variance_sw_vanishes",
            row.sw_over_a < 1e-3,
            row.sw_over_a,
            1e-3,
            format!("Var(L_sw) / Var(L_A) at beta = {}", row.beta),
        ),
        check(
            "variance_ext_lower_bound",
            row.bound_holds,
            row.ext.variance - row.lower_bound,
            3.0 * row.bound_std_error,
            format!("Var(L_ext) = {:.4e}, bound = {:.4e}", row.ext.variance, row.lower_bound),
        ),
    ])
}

/// Runs every built-in check; the report passes when all checks pass.
pub fn run_verification_suite(seed: u64) -> Result<VerificationReport> {
    let mut checks = vec![
        check_divergence_threshold()?,
        check_bounds_brute_force(seed)?,
        check_loss_decomposition(seed)?,
        check_erm_reduction(seed)?,
        check_beta_target(seed)?,
    ];
    checks.extend(check_gradients(seed)?);
    checks.extend(check_variance(seed)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        seed,
        checks,
        passed,
    })
}
