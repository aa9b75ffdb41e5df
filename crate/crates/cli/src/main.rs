//! `icx`: few-shot in-context intent classification experiments.

mod commands;
mod exit;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use icx_core::corpus::Split;

use commands::{InputFormat, ReportOutputs, RunOutputs};
use settings::ExperimentArgs;

#[derive(Debug, Parser)]
#[command(
    name = "icx",
    version,
    about = "Few-shot in-context intent classification with boolean prompts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a dataset file into canonical JSONL.
    #[command(group(ArgGroup::new("input").required(true).args(["tsv", "jsonl"])))]
    Convert {
        /// `utterance<TAB>label` lines.
        #[arg(long)]
        tsv: Option<PathBuf>,
        /// Canonical JSONL to validate and rewrite.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long, default_value = "train", value_parser = parse_split)]
        split: Split,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Resolve the token budget and k schedule without running anything.
    Plan {
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Run the experiment and write report.json / report.csv.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Output directory.
        #[arg(long, default_value = "icx-report")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Write every prompt as JSON under this directory.
        #[arg(long)]
        dump_prompts: Option<PathBuf>,
        /// Write prediction records (JSONL per cell) under this directory.
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Derive CSV / plot data from report JSON, merging several reports.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// k, mean ± std per k for error-band plots.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        /// Write the merged report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: icx_core::corpus::CorpusError| e.to_string())
}

fn render_chain(error: &anyhow::Error) -> String {
    let mut out = error.to_string();
    for cause in error.chain().skip(1) {
        let cause = cause.to_string();
        if !out.contains(&cause) {
            out.push_str(": ");
            out.push_str(&cause);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert {
            tsv,
            jsonl,
            language,
            split,
            out,
            force,
        } => {
            let input = match (tsv, jsonl) {
                (Some(p), _) => InputFormat::Tsv(p),
                (None, Some(p)) => InputFormat::Jsonl(p),
                (None, None) => unreachable!("clap enforces the input group"),
            };
            commands::convert(input, language.as_deref(), split, &out, force)
        }
        Command::Plan { experiment } => commands::plan(&experiment),
        Command::Run {
            experiment,
            out,
            force,
            dump_prompts,
            dump_predictions,
        } => commands::run(
            &experiment,
            RunOutputs {
                out: &out,
                force,
                dump_prompts: dump_prompts.as_deref(),
                dump_predictions: dump_predictions.as_deref(),
            },
        ),
        Command::Report {
            inputs,
            csv,
            plot_data,
            out,
            force,
        } => commands::report(
            &inputs,
            ReportOutputs {
                csv: csv.as_deref(),
                plot_data: plot_data.as_deref(),
                merged: out.as_deref(),
                force,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e.error));
            ExitCode::from(e.code as u8)
        }
    }
}
