//! Command-line entry point. Exit codes: 0 success, 2 for anything wrong
//! with the invocation or its input files, 1 for failures once work is
//! underway.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kd_dlgan_cli::runner::{self, DataSpec, RunOptions};
use kd_dlgan_cli::{checkpoint, plot, Classify, CliError, CliResult};
use kd_dlgan_core::gradcheck::{run_checks, CheckModule};

#[derive(Parser)]
#[command(
    name = "kd-dlgan",
    version,
    about = "Data-limited GAN training with a frozen teacher: feature mimicry, \
             correlation distillation, metrics and checkpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a TOML config, writing a run directory.
    Train {
        /// Config file path.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Checkpoint to continue from; requires the original config.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a dataset and append metric rows.
    Eval {
        /// Checkpoint file path.
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        /// One of: synthetic, image_folder:PATH, packed_binary:PATH.
        #[arg(long, value_name = "SPEC")]
        data: String,
    },
    /// Compare analytic gradients against central finite differences.
    CheckGrads {
        /// One of: all, agkd, cgkd, adv.
        #[arg(long, default_value = "all")]
        module: String,
    },
    /// Render every metric series in a run directory as a PNG curve.
    Plot {
        /// Run directory holding metrics.csv.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Usage problems print clap's message and exit 2; --help and
        // --version exit 0.
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, resume } => train(&config, resume),
        Command::Eval { ckpt, data } => eval(&ckpt, &data),
        Command::CheckGrads { module } => check_grads(&module),
        Command::Plot { run } => plot_run(&run),
    }
}

fn train(config_path: &Path, resume: Option<PathBuf>) -> CliResult<()> {
    let config = runner::load_config(config_path)?;
    let opts = RunOptions {
        resume,
        ..Default::default()
    };
    runner::run_experiment(config, &opts).map(|_| ())
}

fn eval(ckpt: &Path, data: &str) -> CliResult<()> {
    let spec = DataSpec::parse(data)?;
    let (meta, arrays) =
        checkpoint::load_checkpoint(ckpt).or_validation("cannot load checkpoint")?;
    let mut config = checkpoint::config_from_meta(&meta).or_validation("bad checkpoint")?;
    // Standalone evaluation scores against everything the data spec
    // provides, not the training-time subset.
    config.data.fraction = 1.0;
    let (dataset, templates) = match &spec {
        DataSpec::Synthetic => kd_dlgan_core::engine::dataset_from_config(&config)
            .or_validation("--data synthetic needs a config with a synthetic dataset")?,
        DataSpec::ImageFolder(path) => {
            let ds = kd_dlgan_cli::io::read_image_folder(path, config.model.channels)
                .or_validation("cannot load image folder")?;
            (ds, None)
        }
        DataSpec::PackedBinary(path) => {
            let ds = kd_dlgan_cli::io::read_packed_binary(path)
                .or_validation("cannot load packed dataset")?;
            (ds, None)
        }
    };
    let (mut state, warnings) =
        checkpoint::state_from_checkpoint(&meta, &arrays, config, dataset, templates)
            .or_validation("cannot rebuild run from checkpoint")?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    let (rows, warnings) = state.evaluate().or_runtime("evaluation failed")?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    let run_dir = match ckpt.parent() {
        Some(p) if p.as_os_str().is_empty() => Path::new("."),
        Some(p) => p,
        None => Path::new("."),
    };
    runner::append_eval_rows(run_dir, state.step, state.config.master_seed, &rows)?;
    for (name, value) in &rows {
        kd_dlgan_cli::say(format!("{} {}", name, value));
    }
    Ok(())
}

fn check_grads(module: &str) -> CliResult<()> {
    let module =
        CheckModule::parse(module).map_err(|e| CliError::Validation(anyhow::anyhow!("{}", e)))?;
    let reports = run_checks(module, 0).or_runtime("gradient check could not run")?;
    let mut all_ok = true;
    for r in &reports {
        let worst = r
            .report
            .per_parameter_errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(name, _)| name.as_str())
            .unwrap_or("-");
        kd_dlgan_cli::say(format!(
            "{:<8} max_rel_error {:.3e}  tolerance {:.0e}  worst {}  {}",
            r.name,
            r.report.max_rel_error,
            r.tolerance,
            worst,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
        all_ok &= r.passed();
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::runtime(
            "gradient check failed; see the report above",
        ))
    }
}

fn plot_run(run: &Path) -> CliResult<()> {
    let files = plot::render_run(run)?;
    for f in &files {
        kd_dlgan_cli::say(f.display());
    }
    Ok(())
}
