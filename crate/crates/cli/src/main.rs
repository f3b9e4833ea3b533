mod args;

use std::io::Write;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use wfc_core::config::PipelineConfig;
use wfc_core::dataset::Representation;
use wfc_core::pipeline::{self, ComparisonInput, Cursor, Workdir};
use wfc_core::stats::CliffsVariant;

use crate::args::{Cli, Command};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

/// Failures caused by bad invocations rather than bad data.
#[derive(Debug)]
struct UsageError(anyhow::Error);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<pipeline::PipelineError> for Failure {
    fn from(e: pipeline::PipelineError) -> Self {
        Failure::Data(e.into())
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn init_pool(config: &PipelineConfig) -> Result<(), UsageError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        builder = builder.num_threads(n);
    }
    builder
        .build_global()
        .context("starting worker pool")
        .map_err(UsageError)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.resolve().map_err(UsageError)?;
    init_pool(&config)?;
    let wd = Workdir::new(&config.workdir);

    match cli.command {
        Command::Ingest => {
            let root = config
                .corpus_root
                .as_deref()
                .context("--corpus-root is required")
                .map_err(UsageError)?;
            let manifest = pipeline::ingest(root, &wd)?;
            for f in manifest.files.iter().filter(|f| f.error.is_some()) {
                eprintln!(
                    "warning: {}/{}: {}",
                    f.repo,
                    f.path,
                    f.error.as_deref().unwrap_or_default()
                );
            }
            print_json(&serde_json::json!({
                "repos": manifest.repos,
                "workflows": manifest.workflows,
                "general": manifest.general,
                "unparseable": manifest.unparseable,
            }))?;
        }
        Command::Abstract => print_json(&pipeline::abstract_corpus(&wd)?)?,
        Command::BuildDataset => print_json(&pipeline::build_dataset(&wd, &config)?)?,
        Command::Split => {
            let a = pipeline::split(&wd, &config)?;
            print_json(&serde_json::json!({
                "projects": a.projects.len(),
                "workflow_counts": a.workflow_counts,
                "realized_ratios": a.realized_ratios(),
            }))?;
        }
        Command::TrainNgram => print_json(&pipeline::train_ngram(&wd, &config)?)?,
        Command::Suggest(s) => {
            let text = std::fs::read_to_string(&s.workflow)
                .with_context(|| format!("reading {}", s.workflow.display()))?;
            let model = pipeline::load_model(&s.model)?;
            let repr = if s.abstracted {
                Representation::Abstracted
            } else {
                Representation::Raw
            };
            let cursor = Cursor {
                job: s.job,
                step: s.step,
            };
            let path = s.workflow.to_string_lossy();
            let completion = pipeline::suggest(&model, &text, &path, &cursor, repr)?;
            if !completion.tokens.is_empty() {
                println!("{}", completion.text());
                println!(
                    "confidence: {:.6} (stop: {})",
                    completion.confidence, completion.stop
                );
            }
        }
        Command::Predict(p) => {
            let n = pipeline::predict(&p.model, &p.instances, &p.out)?;
            print_json(&serde_json::json!({ "predictions": n }))?;
        }
        Command::Evaluate(e) => {
            let report = pipeline::evaluate(&e.predictions, &e.instances, &e.out_dir, e.strict)?;
            print_json(&report.metrics)?;
        }
        Command::Buckets(b) => {
            let report = pipeline::buckets(&b.predictions, &b.instances)?;
            if let Some(out) = &b.out {
                pipeline::write_json(out, &report)?;
            }
            print_json(&report)?;
        }
        Command::CompareStats(c) => {
            let inputs: Vec<ComparisonInput> = c
                .pairs
                .into_iter()
                .map(|(label, a, b)| ComparisonInput { label, a, b })
                .collect();
            let variant = if c.paired_delta {
                CliffsVariant::PairedSign
            } else {
                CliffsVariant::Columns
            };
            let rows = pipeline::compare_stats(&inputs, variant)?;
            if let Some(out) = &c.out {
                pipeline::write_json(out, &rows)?;
            }
            print_json(&rows)?;
        }
        Command::Run => {
            if config.corpus_root.is_none() {
                return Err(UsageError(anyhow::anyhow!("--corpus-root is required")).into());
            }
            print_json(&pipeline::run_all(&config)?)?;
        }
    }
    Ok(())
}
