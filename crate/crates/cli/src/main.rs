use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use icdq_cli::config::PipelineConfig;
use icdq_cli::stages;

/// Automated ICD coding pipeline: extract diagnosis queries from clinical
/// notes, contextualize them through a knowledge-base graph and a trained
/// relevance model, and retrieve codes from a built-in BM25 index.
#[derive(Parser)]
#[command(name = "icdq", version, about)]
struct Cli {
    /// Pipeline configuration file (key = value).
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the corpus, knowledge base, and ICD table.
    Ingest,
    /// Extract diagnosis queries and build one contextual graph per query.
    BuildGraphs,
    /// Generate distant-supervision node labels from ICD descriptions.
    Label,
    /// Train the relevant-node detection model.
    Train,
    /// Emit contextual queries and top-k retrieved codes per query.
    Predict,
    /// Run the evaluation harnesses and write the report.
    Evaluate,
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    config.validate()?;
    match cli.command {
        Command::Ingest => stages::run_ingest(&config),
        Command::BuildGraphs => stages::run_build_graphs(&config),
        Command::Label => stages::run_label(&config),
        Command::Train => stages::run_train(&config),
        Command::Predict => stages::run_predict(&config),
        Command::Evaluate => stages::run_evaluate(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let context: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": err.to_string(), "context": context }));
            ExitCode::FAILURE
        }
    }
}
