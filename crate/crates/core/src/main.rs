use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use gerne::dataset::{write_csv, SyntheticSpec};
use gerne::harness::config::{AttributeMode, DatasetSource, SyntheticSource};
use gerne::harness::data::synthetic_splits;
use gerne::harness::grid::GridReport;
use gerne::harness::report::{summary_line, write_json};
use gerne::harness::variance::write_variance_csv;
use gerne::harness::{
    emit_report, run_grid_search, run_training, run_variance_probe, run_verification_suite, Context, RunConfig,
    VarianceConfig,
};
use gerne::pseudoattr::assign_pseudo_attributes;
use gerne::GerneError;

#[derive(Parser)]
#[command(name = "gerne", version, about = "Debiased training by gradient extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Record wall-clock time in the report (reports are then no longer
    /// byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV files.
    Generate(Common),
    /// One training run.
    Train(Common),
    /// Grid search over c, beta and t.
    Grid(Common),
    /// Unknown-attribute pipeline: auxiliary model, pseudo-groups, grid.
    Pseudo(Common),
    /// Run the built-in oracle checks.
    Verify(Common),
    /// Loss variance of the extrapolated loss against the SW comparator.
    Variance(Common),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GenerateInput {
    Run(Box<RunConfig>),
    Source(SyntheticSource),
    Spec(SyntheticSpec),
}

fn read_config<T: for<'de> Deserialize<'de>>(common: &Common) -> anyhow::Result<T> {
    let path = common.config.as_ref().context("--config is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| GerneError::InvalidConfig(format!("{}: {e}", path.display())).into())
}

fn run_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut config: RunConfig = read_config(common)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn generate(common: &Common) -> anyhow::Result<()> {
    let mut source = match read_config::<GenerateInput>(common)? {
        GenerateInput::Run(config) => match config.dataset {
            DatasetSource::Synthetic(s) => s,
            DatasetSource::Csv(_) => anyhow::bail!(GerneError::InvalidConfig("config has no synthetic dataset".into())),
        },
        GenerateInput::Source(s) => s,
        GenerateInput::Spec(spec) => SyntheticSource {
            spec,
            n_val_per_class: 0,
            n_test_per_class: 0,
            eval_alpha: None,
        },
    };
    if let Some(seed) = common.seed {
        source.spec.seed = seed;
    }
    fs::create_dir_all(&common.out)?;
    let write_eval = source.n_val_per_class > 0 && source.n_test_per_class > 0;
    if write_eval {
        let splits = synthetic_splits(&source)?;
        write_csv(&splits.train, common.out.join("train.csv"))?;
        write_csv(&splits.val, common.out.join("val.csv"))?;
        write_csv(&splits.test, common.out.join("test.csv"))?;
    } else {
        let train = gerne::dataset::generate_synthetic(&source.spec)?;
        write_csv(&train, common.out.join("train.csv"))?;
    }
    println!("wrote synthetic data to {}", common.out.display());
    Ok(())
}

fn train(common: &Common) -> anyhow::Result<()> {
    let config = run_config(common)?;
    let start = Instant::now();
    let mut report = run_training(&config)?;
    if common.timing {
        report.wall_clock_ms = Some(elapsed_ms(start));
    }
    emit_report(&report, &common.out)?;
    summary_line(&mut io::stdout(), &report)?;
    Ok(())
}

fn finish_grid(common: &Common, mut grid: GridReport, start: Instant) -> anyhow::Result<GridReport> {
    if common.timing {
        grid.wall_clock_ms = Some(elapsed_ms(start));
    }
    fs::create_dir_all(&common.out)?;
    write_json(&grid, common.out.join("grid.json"))?;
    let mut out = io::stdout();
    for cell in &grid.cells {
        writeln!(
            out,
            "cell {:>3} t={:<8} c={:<6} beta={:<10.5} {:?} score={}",
            cell.index,
            cell.t.map_or_else(|| "-".into(), |t| t.to_string()),
            cell.c,
            cell.beta,
            cell.status,
            cell.val_score.map_or_else(|| "n/a".into(), |s| format!("{s:.4}")),
        )?;
    }
    match &grid.best {
        Some(best) => {
            emit_report(best, &common.out)?;
            write!(out, "best cell {}: ", grid.best_index.expect("best index"))?;
            summary_line(&mut out, best)?;
        }
        None if grid.any_diverged() => anyhow::bail!(GerneError::Divergence {
            epoch: grid.first_divergence().unwrap_or(1)
        }),
        None => anyhow::bail!(GerneError::InvalidConfig("no grid cell finished".into())),
    }
    Ok(grid)
}

fn grid(common: &Common) -> anyhow::Result<()> {
    let config = run_config(common)?;
    let start = Instant::now();
    let ctx = Context::prepare(&config)?;
    let report = run_grid_search(&ctx, &config)?;
    finish_grid(common, report, start)?;
    Ok(())
}

fn pseudo(common: &Common) -> anyhow::Result<()> {
    let mut config = run_config(common)?;
    if config.attribute_mode == AttributeMode::Known {
        log::info!("switching attribute_mode to unknown_train");
        config.attribute_mode = AttributeMode::UnknownTrain;
        config.validate()?;
    }
    let start = Instant::now();
    let ctx = Context::prepare(&config)?;
    let report = run_grid_search(&ctx, &config)?;
    let grid = finish_grid(common, report, start)?;
    let best = grid.best.as_ref().expect("finish_grid checked the winner");
    let t = best.pseudo.as_ref().expect("unknown-attribute run").t;
    let (aux, _) = ctx.auxiliary.as_ref().expect("auxiliary model");
    let grouping = assign_pseudo_attributes(aux, &ctx.train, t)?;
    grouping.write_csv(ctx.train.labels(), common.out.join("pseudo.csv"))?;
    Ok(())
}

fn verify(common: &Common) -> anyhow::Result<bool> {
    let report = run_verification_suite(common.seed.unwrap_or(0))?;
    fs::create_dir_all(&common.out)?;
    write_json(&report, common.out.join("verification.json"))?;
    for c in &report.checks {
        println!(
            "{} {:<34} value={:.6e} tol={:.1e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance,
            c.detail
        );
    }
    Ok(report.passed)
}

fn variance(common: &Common) -> anyhow::Result<()> {
    let mut config: VarianceConfig = read_config(common)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let start = Instant::now();
    let mut report = run_variance_probe(&config)?;
    if common.timing {
        report.wall_clock_ms = Some(elapsed_ms(start));
    }
    fs::create_dir_all(&common.out)?;
    write_json(&report, common.out.join("variance.json"))?;
    write_variance_csv(&report, common.out.join("variance.csv"))?;
    println!("Var(L_A) = {:.6e}", report.majority.variance);
    for r in &report.rows {
        println!(
            "beta={:<8.4} w={:<7.4} Var(L_ext)/Var(L_A)={:<10.4e} Var(L_sw)/Var(L_A)={:<10.4e} bound_holds={}",
            r.beta, r.sw_weight, r.ext_over_a, r.sw_over_a, r.bound_holds
        );
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<GerneError>().map_or(1, |e| e.exit_code() as u8)
}

fn ensure_out(path: &Path) -> anyhow::Result<()> {
    if path.exists() && !path.is_dir() {
        anyhow::bail!("--out {} exists and is not a directory", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => ensure_out(&c.out).and_then(|_| generate(c)),
        Command::Train(c) => ensure_out(&c.out).and_then(|_| train(c)),
        Command::Grid(c) => ensure_out(&c.out).and_then(|_| grid(c)),
        Command::Pseudo(c) => ensure_out(&c.out).and_then(|_| pseudo(c)),
        Command::Variance(c) => ensure_out(&c.out).and_then(|_| variance(c)),
        Command::Verify(c) => match ensure_out(&c.out).and_then(|_| verify(c)) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("verification failed");
                return ExitCode::from(4);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
