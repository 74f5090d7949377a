//! `codetext`: builds corpora, trains tokenizers and models, decodes and
//! scores task predictions.

mod commands;
mod config;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codetext::{Error, Result};
use log::LevelFilter;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "codetext", version, about = "Code and text encoder-decoder pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set pretrain.steps=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Assemble pretraining sequences from function records.
    BuildCorpus,
    /// Learn a subword vocabulary from the built corpus.
    TrainTokenizer,
    /// Pretrain a model with span corruption.
    Pretrain,
    /// Fine-tune a pretrained checkpoint on a task mixture.
    Finetune,
    /// Decode a task split with a fine-tuned checkpoint.
    Predict,
    /// Score predictions against task references.
    Evaluate,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::BuildCorpus => "build-corpus",
            Command::TrainTokenizer => "train-tokenizer",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml::Value::String(dir.clone())));
    }
    if let Some(level) = &cli.log_level {
        overrides.push(format!("log_level={}", toml::Value::String(level.clone())));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn init_logging(level: &str) -> Result<()> {
    let filter: LevelFilter = level
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("unknown log level `{level}`")))?;
    env_logger::Builder::new()
        .filter_level(filter)
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_ascii_lowercase(),
                record.target(),
                record.args()
            )
        })
        .try_init()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    init_logging(&cfg.log_level)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let out = cfg.out();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    log::info!(
        "event=start command={} config_sha256={} seed={}",
        cli.command.name(),
        cfg.hash(),
        cfg.seed
    );
    let outcome = match cli.command {
        Command::BuildCorpus => commands::build_corpus(&cfg)?,
        Command::TrainTokenizer => commands::train_tokenizer(&cfg)?,
        Command::Pretrain => commands::pretrain(&cfg)?,
        Command::Finetune => commands::finetune(&cfg)?,
        Command::Predict => commands::predict(&cfg)?,
        Command::Evaluate => commands::evaluate(&cfg)?,
        Command::Gradcheck => commands::gradcheck(&cfg)?,
    };
    let path = manifest::write(cli.command.name(), &cfg, &outcome)?;
    log::info!("event=done command={} manifest={}", cli.command.name(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error code={} message={:?}", e.code(), e.to_string());
            ExitCode::from(1)
        }
    }
}
