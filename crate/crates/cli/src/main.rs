use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ope_core::estimators::EstimatorKind;
use ope_core::{
    emit_report, run_experiment, ExperimentConfig, ExperimentFailure, OpeError, ReportFormat,
};

/// Off-policy evaluation benchmark runner.
#[derive(Parser)]
#[command(name = "ope-harness", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the RMSE report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Overrides `experiment.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `experiment.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Parse and check a config file without running it.
    ValidateConfig { config: PathBuf },
    /// Print the estimator names accepted in `estimators.list`.
    ListEstimators,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListEstimators => {
            for kind in EstimatorKind::ALL {
                println!("{:<10} {}", kind.name(), kind.description());
            }
            ExitCode::SUCCESS
        }
        Command::ValidateConfig { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                let names: Vec<String> = cfg.estimators.list.clone();
                println!(
                    "ok: {} trials, {} logging, estimators {}",
                    cfg.experiment.trials,
                    cfg.logging.mode,
                    names.join(",")
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run {
            config,
            out,
            format,
            jobs,
            seed,
            trials,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            if let Some(t) = trials {
                cfg.experiment.trials = t;
            }
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Markdown => ReportFormat::Markdown,
            };
            run(&cfg, out.as_deref(), format, jobs)
        }
    }
}

fn run(cfg: &ExperimentConfig, out: Option<&Path>, format: ReportFormat, jobs: usize) -> ExitCode {
    let report = match run_experiment(cfg, jobs) {
        Ok(r) => r,
        Err(failure) => {
            dump_partial(&failure, out);
            return fail(&failure.error);
        }
    };
    let secs: f64 = report.trials.iter().map(|t| t.seconds).sum();
    eprintln!(
        "{} trials, mean wall-clock {:.2}s per trial",
        report.trials.len(),
        secs / report.trials.len() as f64
    );
    let text = match emit_report(&report, format) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                return fail(&OpeError::Io(e));
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

/// Writes the finished trials as `trial,seed,true_value,<estimator>...` rows.
fn dump_partial(failure: &ExperimentFailure, out: Option<&Path>) {
    if failure.completed.is_empty() {
        return;
    }
    let mut text = String::from("trial,seed,true_value");
    for (k, _) in &failure.completed[0].estimates {
        text.push(',');
        text.push_str(k.name());
    }
    text.push('\n');
    for t in &failure.completed {
        text.push_str(&format!("{},{},{}", t.trial, t.seed, t.true_value));
        for (_, v) in &t.estimates {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    let path = match out {
        Some(p) => p.with_extension("partial.csv"),
        None => PathBuf::from("ope-harness.partial.csv"),
    };
    match std::fs::write(&path, text) {
        Ok(()) => eprintln!(
            "wrote {} completed trials to {}",
            failure.completed.len(),
            path.display()
        ),
        Err(e) => eprintln!("could not write partial results: {e}"),
    }
}

fn fail(e: &OpeError) -> ExitCode {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    ExitCode::from(exit_code(e))
}

fn exit_code(e: &OpeError) -> u8 {
    match e {
        OpeError::Config(_) => EXIT_CONFIG,
        OpeError::Trial { source, .. } => exit_code(source),
        _ => EXIT_RUNTIME,
    }
}
