use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ibl_core::codemodel::guest::{GuestRunner, RunnerCommand};
use ibl_core::codemodel::{validate_with_limit, DEFAULT_TIME_LIMIT_MS};
use ibl_core::prompting::{render_ibl_prompt, PromptTemplate};
use ibl_core::{auc, run_suite, BackendKind, CodeModel, Dataset, Dialect, ExperimentConfig, ModelMeta};

#[derive(Parser)]
#[command(name = "ibl", version, about = "Generate, validate and score LLM-written code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the backend kind from the config.
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Replay source, or where a live backend records replies.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep finished cells from an earlier run in the output directory.
        #[arg(long)]
        resume: bool,
        /// Directory that relative dataset paths are resolved against.
        #[arg(long, default_value = ".")]
        base: PathBuf,
    },
    /// Check a code model against a probe CSV (features plus `target`).
    ValidateModel {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long, value_enum, default_value_t = DialectArg::Expression)]
        dialect: DialectArg,
        /// Use the file as-is instead of extracting the fenced block.
        #[arg(long)]
        verbatim: bool,
        /// Guest runner program and arguments, for the guest dialect.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        runner: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_TIME_LIMIT_MS)]
        time_limit_ms: u64,
    },
    /// ROC AUC of a score column against a 0/1 label column.
    Auc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Print the code-model prompt for a training CSV.
    Prompt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = DialectArg::Expression)]
        dialect: DialectArg,
        #[arg(long)]
        template: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Guest,
    Expression,
}

impl From<DialectArg> for Dialect {
    fn from(d: DialectArg) -> Self {
        match d {
            DialectArg::Guest => Dialect::Guest,
            DialectArg::Expression => Dialect::Expression,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, backend, fixtures, output, resume, base } => {
            let mut cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            if let Some(kind) = backend {
                cfg.backend.kind = kind;
            }
            if let Some(dir) = fixtures {
                cfg.backend.fixture_dir = Some(dir);
            }
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            let llm = cfg.backend.build()?;
            let summary = run_suite(&cfg, llm.as_ref(), &base, resume)?;
            println!(
                "cells={} ran={} skipped={} aborted={} requests={}",
                summary.cells, summary.ran, summary.skipped, summary.aborted, summary.requests
            );
            println!("results: {}", base.join(&cfg.output_dir).join("results.csv").display());
            Ok(if summary.aborted > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Command::ValidateModel { source, probe, dialect, verbatim, runner, time_limit_ms } => {
            let raw = fs::read_to_string(&source).with_context(|| format!("reading {}", source.display()))?;
            let probe = read_dataset(&probe)?;
            let meta = ModelMeta { dataset_id: probe.id().to_string(), seed: 0, n_train: 0, generation_index: 0 };
            let cm = if verbatim {
                CodeModel::verbatim(raw, dialect.into(), meta)
            } else {
                CodeModel::from_response(raw, dialect.into(), meta)
            };
            let mut guest = match runner.split_first() {
                Some((program, args)) => Some(GuestRunner::spawn(&RunnerCommand::new(program.as_str(), args))?),
                None => None,
            };
            let report = validate_with_limit(&cm, &probe, guest.as_mut(), time_limit_ms);
            println!("{}", report.status);
            if !report.detail.is_empty() {
                println!("{}", report.detail);
            }
            if let Some(g) = guest {
                g.shutdown();
            }
            Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Auc { scores, labels } => {
            let scores = read_column(&scores)?;
            let labels = read_column(&labels)?
                .into_iter()
                .map(|v| match v {
                    0.0 => Ok(0),
                    1.0 => Ok(1),
                    _ => bail!("label {v} is not 0 or 1"),
                })
                .collect::<Result<Vec<u8>>>()?;
            println!("{}", auc(&scores, &labels)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Prompt { data, dialect, template } => {
            let train = read_dataset(&data)?;
            let tmpl = match (template, Dialect::from(dialect)) {
                (Some(path), _) => PromptTemplate::from_file(path)?,
                (None, Dialect::Guest) => PromptTemplate::guest(),
                (None, Dialect::Expression) => PromptTemplate::expression(),
            };
            let prompt = render_ibl_prompt(&train, &tmpl)?;
            println!("{}\n\n{}", prompt.system_text, prompt.user_text);
            eprintln!("~{} tokens", prompt.token_estimate);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Dataset::read_csv(id, file)?)
}

/// One number per line; a non-numeric first line is taken as a header.
fn read_column(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(_) => bail!("{}:{}: `{line}` is not a number", path.display(), i + 1),
        }
    }
    Ok(values)
}
