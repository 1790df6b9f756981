//! Binary entry point: argument parsing, dispatch, and error rendering.
//!
//! Every flag mirrors a config-file field and overrides it; on failure the
//! process prints one machine-readable JSON object to stderr and exits
//! nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use acgen_cli::commands::{
    cmd_eval_acs, cmd_eval_retrieval, cmd_generate, cmd_index, cmd_polish, cmd_report, Pipeline,
};
use acgen_cli::config::{Overrides, PipelineConfig};
use acgen_cli::error::{error_json, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "acgen",
    version,
    about = "Generate and evaluate Gherkin acceptance criteria from user stories"
)]
struct Cli {
    /// Path to the pipeline configuration file.
    #[arg(long, global = true, default_value = "acgen.toml")]
    config: PathBuf,

    /// Override: dataset JSON file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Override: cache directory (replay records and indexes).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Override: parent directory for run directories.
    #[arg(long, global = true)]
    run_root: Option<PathBuf>,

    /// Override: text retrieval strategy (dense_cosine | lm_scored).
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Override: visual retrieval variant (html_full | html_pruned |
    /// direct_embedding).
    #[arg(long, global = true)]
    variant: Option<String>,

    /// Override: number of documents to retrieve per modality.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Override: prompt template (apeer | urial).
    #[arg(long, global = true)]
    template: Option<String>,

    /// Override: ablation mode (full | no_vrag | no_rag).
    #[arg(long, global = true)]
    ablation: Option<String>,

    /// Override: maximum prompt size in bytes.
    #[arg(long, global = true)]
    max_prompt_bytes: Option<usize>,

    /// Override: polish acceptance threshold (1-5).
    #[arg(long, global = true)]
    threshold: Option<u8>,

    /// Override: maximum polish rounds.
    #[arg(long, global = true)]
    max_rounds: Option<usize>,

    /// Override: local scorer (verifier | ur3).
    #[arg(long, global = true)]
    scorer: Option<String>,

    /// Override: provider cache mode (off | record | replay | auto).
    #[arg(long, global = true)]
    cache_mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the retrieval indexes.
    Index,
    /// Retrieve context and generate acceptance criteria per story.
    Generate,
    /// Improve generated criteria with the reward loop.
    Polish,
    /// Score retrieval against the dataset's relevance labels.
    EvalRetrieval,
    /// Judge criteria against objectives and reference sets.
    EvalAcs,
    /// Consolidate evaluation outputs into one JSON + text report.
    Report,
}

fn overrides_of(cli: &Cli) -> Overrides {
    Overrides {
        dataset: cli.dataset.clone(),
        cache_dir: cli.cache_dir.clone(),
        run_root: cli.run_root.clone(),
        strategy: cli.strategy.clone(),
        variant: cli.variant.clone(),
        k: cli.k,
        template: cli.template.clone(),
        ablation: cli.ablation.clone(),
        max_prompt_bytes: cli.max_prompt_bytes,
        threshold: cli.threshold,
        max_rounds: cli.max_rounds,
        scorer: cli.scorer.clone(),
        cache_mode: cli.cache_mode.clone(),
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let config = PipelineConfig::load(&cli.config, &overrides_of(cli))?;
    let (pipeline, _lock) = Pipeline::prepare(config)?;
    let summary = match cli.command {
        Command::Index => cmd_index(&pipeline)?,
        Command::Generate => cmd_generate(&pipeline)?,
        Command::Polish => cmd_polish(&pipeline)?,
        Command::EvalRetrieval => cmd_eval_retrieval(&pipeline)?,
        Command::EvalAcs => cmd_eval_acs(&pipeline)?,
        Command::Report => cmd_report(&pipeline)?,
    };
    Ok(format!("run {}\n{summary}", pipeline.run_id))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
