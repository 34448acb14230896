//! `sparsenet` command-line driver.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Format;
use crate::config::{gather, read_config_file, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "sparsenet",
    version,
    about = "Grow-and-prune training of sparse sensor classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (dataset directory, model file or sweep directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Override one config key, e.g. `--set batch_size=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of classes (2 or 3).
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Run grow-and-prune training on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `server` or `edge`.
        #[arg(long)]
        kind: Option<String>,
        /// Save a checkpoint after the growth phase and stop.
        #[arg(long)]
        stop_after_growth: bool,
        /// Continue from a growth checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Report path (default: `<out>.report.csv`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model on one split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `train`, `val` or `test`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Train and evaluate a list of configs, concatenating their metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Config files, one run each.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Print a model file's header and per-matrix census.
    Inspect {
        #[command(flatten)]
        common: Common,
        model: PathBuf,
    },
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn load_config(
    common: &Common,
    extra: Vec<(&'static str, Option<String>)>,
) -> CliResult<RunConfig> {
    let mut extra = extra;
    extra.push(("seed", common.seed.map(|s| s.to_string())));
    RunConfig::from_settings(&gather(common.config.as_deref(), &common.sets, extra)?)
}

fn require_out(common: &Common) -> CliResult<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing --out".into()))
}

fn format(common: &Common) -> Format {
    match common.format {
        OutputFormat::Text => Format::Text,
        OutputFormat::Csv => Format::Csv,
    }
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Synth { common, classes } => {
            let cfg = load_config(&common, vec![("classes", classes.map(|c| c.to_string()))])?;
            commands::synth(&cfg, require_out(&common)?)
        }
        Command::Train {
            common,
            data,
            kind,
            stop_after_growth,
            resume,
            report,
        } => {
            let cfg = load_config(
                &common,
                vec![
                    ("kind", kind),
                    ("data", path_string(&data)),
                    (
                        "stop_after_growth",
                        stop_after_growth.then(|| "true".into()),
                    ),
                    ("resume", path_string(&resume)),
                    ("report", path_string(&report)),
                ],
            )?;
            commands::train(&cfg, require_out(&common)?)
        }
        Command::Eval {
            common,
            model,
            data,
            split,
        } => {
            let cfg = load_config(
                &common,
                vec![
                    ("model", path_string(&model)),
                    ("data", path_string(&data)),
                    ("split", split),
                ],
            )?;
            let model = cfg
                .model
                .as_deref()
                .ok_or_else(|| CliError::Usage("missing --model".into()))?;
            let data = cfg
                .data
                .as_deref()
                .ok_or_else(|| CliError::Usage("missing --data".into()))?;
            commands::eval(model, data, cfg.split, format(&common))
        }
        Command::Sweep {
            common,
            data,
            configs,
        } => {
            let out = require_out(&common)?;
            let mut runs = Vec::new();
            for path in &configs {
                let mut settings = read_config_file(path)?;
                settings.extend(gather(None, &common.sets, [("data", path_string(&data))])?);
                if let Some(seed) = common.seed {
                    settings.push(("seed".into(), seed.to_string()));
                }
                let name = path
                    .file_stem()
                    .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
                if runs.iter().any(|(n, _)| *n == name) {
                    return Err(CliError::Usage(format!(
                        "two configs share the name `{name}`"
                    )));
                }
                runs.push((name, RunConfig::from_settings(&settings)?));
            }
            commands::sweep(&runs, out)
        }
        Command::Inspect { common, model } => commands::inspect(&model, format(&common)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
