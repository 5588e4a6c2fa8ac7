//! `forge` command-line interface.

pub mod server;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use forge_core::config::{PipelineConfig, CONFIG_ENV};
use forge_core::kb::load_kb;
use forge_core::pipeline::{self, RunOptions};
use forge_core::reference::Split;
use forge_core::review::{sample_review, ReviewStore, SNAPSHOT_FILE};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Reverse region-entity annotation pipeline")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, short, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override values from the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tasks: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scenarios: Option<PathBuf>,
    /// Segmenter output shard; repeat for several.
    #[arg(long = "shard", global = true)]
    pub shards: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub images: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum annotations per entity (0 disables the cap).
    #[arg(long, global = true)]
    pub cap: Option<usize>,
    #[arg(long, global = true)]
    pub extractor_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub extractor_timeout: Option<f64>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every pipeline stage, resuming from existing outputs.
    Run {
        /// Recompute every stage.
        #[arg(long)]
        force: bool,
    },
    /// Recompute dataset statistics from the assembled annotations.
    Stats,
    /// Build entity codes and the collision report.
    Codes {
        /// Tokens per code.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Resolve predictions and report accuracy.
    Eval,
    /// Manual review queue.
    #[command(subcommand)]
    Review(ReviewCommand),
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Sample a review queue from the assembled annotations.
    Sample {
        /// Per-split sizes, e.g. `entity=1400,query=400,wiki=200`.
        #[arg(long, value_parser = parse_sizes)]
        sizes: Option<BTreeMap<Split, usize>>,
        /// Review store directory (default: <output>/review).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Replace an existing store and its verdicts.
        #[arg(long)]
        overwrite: bool,
    },
    /// Serve the review API.
    Serve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        port: Option<u16>,
    },
}

pub fn parse_sizes(raw: &str) -> Result<BTreeMap<Split, usize>, String> {
    let mut out = BTreeMap::new();
    for part in raw.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, n) = part
            .split_once('=')
            .ok_or_else(|| format!("expected split=count, got {part:?}"))?;
        let split = Split::ALL
            .into_iter()
            .find(|s| s.as_str() == name.trim())
            .ok_or_else(|| format!("unknown split {name:?}"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad count in {part:?}"))?;
        out.insert(split, n);
    }
    if out.is_empty() {
        return Err("no sizes given".into());
    }
    Ok(out)
}

/// Config file (if any) with command-line overrides applied. Relative
/// override paths are taken as given, relative to the working directory.
pub fn load_config(path: Option<&Path>, o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let p = &mut cfg.paths;
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if let Some(v) = v {
            *slot = Some(v.clone());
        }
    };
    set(&mut p.kb, &o.kb);
    set(&mut p.tasks, &o.tasks);
    set(&mut p.manifest, &o.manifest);
    set(&mut p.scenarios, &o.scenarios);
    set(&mut p.vocab, &o.vocab);
    set(&mut p.predictions, &o.predictions);
    set(&mut p.images, &o.images);
    set(&mut p.output, &o.output);
    if !o.shards.is_empty() {
        p.shards = o.shards.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.cap {
        cfg.cap = v;
    }
    if let Some(v) = &o.extractor_endpoint {
        cfg.extractor.endpoint = Some(v.clone());
    }
    if let Some(v) = o.extractor_timeout {
        cfg.extractor.timeout_s = v;
    }
    if let Some(v) = o.max_in_flight {
        cfg.extractor.max_in_flight = v;
    }
    cfg.validate_settings()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Run { force } => {
            let report = pipeline::cmd_run(&cfg, RunOptions { force })?;
            for s in &report.stages {
                println!("{:<10} {}", s.stage, if s.ran { "ran" } else { "skipped" });
            }
        }
        Command::Stats => {
            let stats = pipeline::cmd_stats(&cfg)?;
            print!("{}", stats.render());
        }
        Command::Codes { length } => {
            if let Some(l) = length {
                cfg.codes.length = l;
                cfg.validate_settings()?;
            }
            pipeline::cmd_codes(&cfg)?;
            let out = cfg.output_dir()?;
            print!("{}", std::fs::read_to_string(out.join(pipeline::COLLISIONS_FILE))?);
        }
        Command::Eval => {
            if cfg.paths.predictions.is_none() {
                bail!("no predictions file: set paths.predictions or pass --predictions");
            }
            pipeline::cmd_eval(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output_dir()?.join(pipeline::EVAL_TXT))?);
        }
        Command::Review(ReviewCommand::Sample { sizes, store, overwrite }) => {
            let dir = store.map_or_else(|| cfg.review_store(), Ok)?;
            if dir.join(SNAPSHOT_FILE).exists() && !overwrite {
                bail!(
                    "review store {} already exists; pass --overwrite to replace it and its verdicts",
                    dir.display()
                );
            }
            let sizes = sizes.unwrap_or_else(|| cfg.review.sizes.clone());
            let kb_path = cfg.paths.kb.as_ref().context("knowledge base path is not set")?;
            let kb = load_kb(kb_path)?;
            let records = pipeline::load_annotations(&cfg)?;
            let items = sample_review(&records, &kb, &sizes, cfg.seed)?;
            let n = items.len();
            ReviewStore::create(&dir, items)?;
            println!("sampled {n} items into {}", dir.display());
        }
        Command::Review(ReviewCommand::Serve { store, host, port }) => {
            let dir = store.map_or_else(|| cfg.review_store(), Ok)?;
            let store = ReviewStore::open(&dir).with_context(|| format!("opening review store {}", dir.display()))?;
            let addr = SocketAddr::new(host, port.unwrap_or(cfg.review.port));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(store, cfg.paths.images.clone(), addr))?;
        }
    }
    Ok(())
}
