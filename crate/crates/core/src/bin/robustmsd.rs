use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use robustmsd::criteria::{default_lambda, schedule_params, CriterionParams};
use robustmsd::data::{generate_2d_outlier, SynthConfig};
use robustmsd::harness::{
    aggregate_manifest, final_mean_sd, run_experiment, write_aggregate_csv, write_trajectory_csv, ExperimentSpec,
    Manifest, RunStatus, AGGREGATE_FILE, MANIFEST_FILE,
};
use robustmsd::optimizer::{initial_state, run, zero_weights};
use robustmsd::verify::{run_suite, write_suite_csv};
use robustmsd::{Error, Result, Split};

/// Train and evaluate linear classifiers under a robust mean-plus-deviation criterion.
#[derive(Debug, Parser)]
#[command(name = "robustmsd", version)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the two-Gaussian data set with a single outlier.
    Synth {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        outlier_scale: f64,
    },
    /// Train one criterion at one step size and write its trajectory.
    Train(TrainArgs),
    /// Run the full sweep described by --config.
    Experiment,
    /// Run the numerical property suite.
    Verify {
        /// Fewer random instances and Monte Carlo trials.
        #[arg(long)]
        quick: bool,
    },
    /// Re-aggregate an experiment directory and print final mean-SD per criterion.
    Report {
        /// Experiment directory; defaults to --out.
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Sunhuber,
    Erm,
    Cvar,
    Dro,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    criterion: CriterionArg,
    /// Sun-Huber scale weight before the 1/sqrt(n) schedule.
    #[arg(long, default_value_t = 0.9)]
    beta0: f64,
    /// Sun-Huber deviation weight; log(n)/sqrt(n) when unset.
    #[arg(long)]
    lambda: Option<f64>,
    /// CVaR quantile or DRO radius level.
    #[arg(long, default_value_t = 0.5)]
    level: f64,
    /// Step size; the first configured one when unset.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn load_spec(config: Option<&Path>, seed: u64) -> Result<ExperimentSpec> {
    let mut spec = match config {
        Some(path) => ExperimentSpec::from_file(path)?,
        None => ExperimentSpec::default(),
    };
    spec.experiment.seed = seed;
    Ok(spec)
}

fn synth(out: &Path, n: usize, outlier_scale: f64, seed: u64) -> Result<()> {
    let ds = generate_2d_outlier(&SynthConfig {
        n,
        outlier_scale,
        seed,
        ..SynthConfig::default()
    })?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("synth.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x1", "x2", "label"])?;
    for i in 0..ds.n() {
        let row = ds.row(i);
        w.write_record([row[0].to_string(), row[1].to_string(), ds.labels[i].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("wrote {} rows to {}", ds.n(), path.display());
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut spec = load_spec(cli.config.as_deref(), cli.seed)?;
    if let Some(it) = args.iterations {
        spec.optimizer.iterations = it;
    }
    if let Some(ep) = args.epochs {
        spec.optimizer.epochs = ep;
    }
    if args.checkpoint_every.is_some() {
        spec.optimizer.checkpoint_every = args.checkpoint_every;
    }
    let step = args.step.unwrap_or(spec.optimizer.step_sizes[0]);
    let raw = spec.data.load(cli.seed)?;
    let dataset = spec.data.prepare(&raw, cli.seed)?;
    let n_train = dataset.indices(Split::Train).len();
    let params = match args.criterion {
        CriterionArg::Sunhuber => {
            let lambda = args.lambda.or(spec.criteria.lambda).unwrap_or_else(|| default_lambda(n_train));
            schedule_params(n_train, args.beta0, lambda)?
        }
        CriterionArg::Erm => CriterionParams::erm(),
        CriterionArg::Cvar => CriterionParams::cvar(args.level)?,
        CriterionArg::Dro => CriterionParams::chisq_dro(args.level)?,
    };
    let h0 = spec.optimizer.init_weights.clone().unwrap_or_else(|| zero_weights(&dataset));
    let init = initial_state(&dataset, h0)?;
    let config = spec.optimizer.config(step, cli.seed)?;
    let result = run(&params, init, &dataset, &config)?;
    let path = cli.out.join(format!("{}__step={}.csv", params.label(), step));
    write_trajectory_csv(&path, &result.trajectory)?;
    if let Some(last) = result.trajectory.iter().rev().find(|r| r.split == Split::Train) {
        println!(
            "{}: checkpoint {} train mean_sd {:.6} mean_loss {:.6} error_rate {:.4} |h| {:.4}",
            params.label(),
            last.checkpoint,
            last.mean_sd,
            last.mean_loss,
            last.error_rate,
            last.model_norm
        );
    }
    println!("wrote {} records to {}", result.trajectory.len(), path.display());
    Ok(())
}

fn experiment(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("experiment needs --config".into()))?;
    let spec = load_spec(Some(path), cli.seed)?;
    let manifest = run_experiment(&spec, &cli.out)?;
    let diverged = manifest.runs.iter().filter(|r| r.status == RunStatus::Diverged).count();
    println!(
        "{} runs ({} diverged), {} selected; manifest at {}",
        manifest.runs.len(),
        diverged,
        manifest.selected().count(),
        cli.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let rows = aggregate_manifest(&manifest, dir)?;
    write_aggregate_csv(&dir.join(AGGREGATE_FILE), &rows)?;
    let split = if rows.iter().any(|r| r.split == Split::Test) { Split::Test } else { Split::Train };
    println!("final {split} mean_sd over {} trial(s):", manifest.trials);
    for (criterion, value) in final_mean_sd(&rows, split) {
        println!("  {criterion:<28} {value:.6}");
    }
    Ok(())
}

fn verify(out: &Path, quick: bool, seed: u64) -> Result<bool> {
    let rows = run_suite(quick, seed);
    for r in &rows {
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_suite_csv(&out.join("verify.csv"), &rows)?;
    Ok(rows.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth { n, outlier_scale } => synth(&cli.out, *n, *outlier_scale, cli.seed).map(|_| true),
        Command::Train(args) => train(&cli, args).map(|_| true),
        Command::Experiment => experiment(&cli).map(|_| true),
        Command::Verify { quick } => verify(&cli.out, *quick, cli.seed),
        Command::Report { dir } => report(dir.as_deref().unwrap_or(&cli.out)).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
