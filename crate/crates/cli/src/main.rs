mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dprecon::Mechanism;
use tracing_subscriber::EnvFilter;

use crate::config::Config;

#[derive(Parser)]
#[command(name = "dprecon", version, about = "Sanitize text with differential privacy and measure reconstruction attacks")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the privacy budget (epsilon or temperature).
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Overrides the mechanism: word_level, sentence_level_exact, sentence_level_api.
    #[arg(long, global = true)]
    mechanism: Option<Mechanism>,
    /// Attack or generation model id; repeat for several.
    #[arg(long = "model", global = true)]
    models: Vec<String>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sanitize the target corpus.
    Sanitize,
    /// Few-shot reconstruction against chat models.
    AttackBlackbox {
        /// Previously written sanitized.jsonl; sanitizes the corpus if absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write (sanitized, separator, original) training pairs.
    FinetuneExport,
    /// Score a fine-tuned generation endpoint on sanitized records.
    AttackWhiteboxEval {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Aggregate attack results into report.json, report.csv and report.md.
    Evaluate {
        /// Result files or run directories.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Sanitize and attack once per budget.
    Sweep,
    /// Render report.json files as markdown.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Write markdown here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => anyhow::bail!("--config is required for this command"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(b) = cli.budget {
        cfg.sanitize.budget = b;
    }
    if let Some(m) = cli.mechanism {
        cfg.sanitize.mechanism = m;
    }
    if !cli.models.is_empty() {
        cfg.attack_blackbox.models = cli.models.clone();
        cfg.attack_whitebox_eval.models = cli.models.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    if let Command::Report { input, output } = &cli.command {
        return commands::report(input, output.as_deref());
    }
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Sanitize => commands::sanitize(&cfg, out),
        Command::AttackBlackbox { input } => commands::attack_blackbox(&cfg, input.as_deref(), out),
        Command::FinetuneExport => commands::finetune_export(&cfg, out),
        Command::AttackWhiteboxEval { input } => commands::attack_whitebox_eval(&cfg, input.as_deref(), out),
        Command::Evaluate { input } => commands::evaluate(&cfg, input, out),
        Command::Sweep => commands::sweep(&cfg, out),
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let chain: Vec<String> = err.chain().skip(1).map(ToString::to_string).collect();
            let body = serde_json::json!({ "error": err.to_string(), "causes": chain });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
