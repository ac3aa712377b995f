mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlpcfg::Error;

use crate::config::{parse_config_text, RunConfig, KEYS};

#[derive(Parser, Debug)]
#[command(name = "nlpcfg", version, about = "Neural lexicalized PCFG induction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Tokenized text, one sentence per line.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Validation text for `train`; otherwise a share of the corpus is held out.
    #[arg(long, global = true)]
    dev: Option<PathBuf>,
    #[arg(long = "gold-trees", global = true)]
    gold_trees: Option<PathBuf>,
    #[arg(long = "gold-deps", global = true)]
    gold_deps: Option<PathBuf>,
    /// Predicted trees written by `parse`, for `eval`.
    #[arg(long, global = true)]
    predicted: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["main", "f1", "f2", "f3"])]
    factorization: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long = "mc-samples", global = true)]
    mc_samples: Option<usize>,
    #[arg(long, global = true, value_parser = ["random", "pretrained"])]
    init: Option<String>,
    /// Any config key, as KEY=VALUE; may repeat.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Fit a model; writes <out>/model.ckpt and <out>/metrics.tsv.
    Train,
    /// Viterbi-parse a corpus; writes <out>/trees.txt and <out>/deps.txt.
    Parse,
    /// Score predictions against gold trees and/or dependencies.
    Eval,
    /// Draw sentences and trees from a checkpoint.
    Sample,
    /// Finite-difference check of the objective's gradients.
    Gradcheck,
    /// Compare chart inference with exhaustive enumeration.
    Oracle,
}

fn settings(cli: &Cli) -> nlpcfg::Result<RunConfig> {
    let mut map = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            parse_config_text(&text, &p.display().to_string())?
        }
        None => BTreeMap::new(),
    };
    let paths = [
        ("corpus", &cli.corpus),
        ("dev", &cli.dev),
        ("gold_trees", &cli.gold_trees),
        ("gold_deps", &cli.gold_deps),
        ("predicted", &cli.predicted),
        ("embeddings", &cli.embeddings),
        ("checkpoint", &cli.checkpoint),
        ("out", &cli.out),
    ];
    for (k, v) in paths {
        if let Some(p) = v {
            map.insert(k.into(), p.display().to_string());
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    let flags = [
        ("factorization", cli.factorization.clone()),
        ("seed", cli.seed.map(|v| v.to_string())),
        ("workers", cli.workers.map(|v| v.to_string())),
        ("mc_samples", cli.mc_samples.map(|v| v.to_string())),
        ("init", cli.init.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.into(), v);
        }
    }
    RunConfig::from_map(&map)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NLPCFG_LOG", "error")).init();
    let cfg = match settings(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Parse => commands::parse(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Sample => commands::sample(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Oracle => commands::oracle(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
