//! `trendrec` command-line pipeline.

mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trendrec::synthetic::{generate, SyntheticConfig};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::stages::StageName;

#[derive(Debug, Parser)]
#[command(
    name = "trendrec",
    version,
    about = "Trend-aware popularity ranking pipeline"
)]
struct Cli {
    /// TOML config file; every key can also be set through TRENDREC_<KEY>.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (1 = sequential, 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fail on malformed input lines instead of skipping them.
    #[arg(long, global = true)]
    strict: bool,
    /// External score file (`{"sample_id", "score"}` per line).
    #[arg(long, global = true)]
    scores: Option<PathBuf>,
    /// Override a config key, e.g. `--set n_pos=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_kv)]
    set: Vec<(String, String)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse interactions and metadata, window them and build popularity series.
    Ingest,
    /// Build train/validation/test samples.
    Split,
    /// Embed items and write pairwise similarities of the training samples.
    Similarity,
    /// Mine contrastive triplets.
    Mine,
    /// Train the projection head on the mined triplets.
    TrainHead,
    /// Score test samples and rank the evaluation window.
    Score,
    /// Attach explanations to scored samples.
    Explain,
    /// Compute HR, NDCG and Jaccard at the configured cutoffs.
    Evaluate,
    /// Run every stage in order.
    RunAll,
    /// Write a synthetic corpus with planted trending items.
    GenerateSynthetic {
        /// Directory for interactions.jsonl and metadata.jsonl.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = SyntheticConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = SyntheticConfig::default().items)]
        items: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().windows)]
        windows: u32,
        #[arg(long, default_value_t = SyntheticConfig::default().planted)]
        planted: usize,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut sets = cli.set.clone();
    if let Some(out) = &cli.out {
        sets.push(("out_dir".into(), toml_str(out)));
    }
    if let Some(t) = cli.threads {
        sets.push(("threads".into(), t.to_string()));
    }
    if cli.strict {
        sets.push(("strict".into(), "true".into()));
    }
    if let Some(s) = &cli.scores {
        sets.push(("scores".into(), toml_str(s)));
    }
    PipelineConfig::load(cli.config.as_deref(), std::env::vars(), &sets)
}

fn toml_str(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn init_threads(cfg: &PipelineConfig) {
    #[cfg(feature = "parallel")]
    if cfg.threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cfg.threads > 1 {
        log::warn!("built without the `parallel` feature; running sequentially");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stage = match &cli.command {
        Command::GenerateSynthetic {
            dir,
            seed,
            items,
            windows,
            planted,
        } => {
            let cfg = SyntheticConfig {
                seed: *seed,
                items: *items,
                windows: *windows,
                planted: *planted,
                ..Default::default()
            };
            let corpus = generate(&cfg)?;
            let (i, m) = corpus.write(dir)?;
            println!("{}\n{}", i.display(), m.display());
            println!("planted: {}", corpus.planted.join(", "));
            return Ok(());
        }
        Command::Ingest => Some(StageName::Ingest),
        Command::Split => Some(StageName::Split),
        Command::Similarity => Some(StageName::Similarity),
        Command::Mine => Some(StageName::Mine),
        Command::TrainHead => Some(StageName::TrainHead),
        Command::Score => Some(StageName::Score),
        Command::Explain => Some(StageName::Explain),
        Command::Evaluate => Some(StageName::Evaluate),
        Command::RunAll => None,
    };
    let cfg = effective_config(&cli)?;
    init_threads(&cfg);
    match stage {
        Some(s) => stages::run(s, &cfg),
        None => stages::run_all(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
