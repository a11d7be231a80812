use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use dhtsim_core::config::{ConfigFile, ExperimentConfig, ExperimentKind};
use dhtsim_core::experiment::run_all;
use dhtsim_core::netsim::OverheadScope;
use dhtsim_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Discrete-event Kademlia simulator for data availability sampling.
///
/// Values given as flags override the same keys in the config file.
#[derive(Parser, Debug)]
#[command(name = "dhtsim", version)]
struct Args {
    /// TOML experiment file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// sampling, seeding or hops
    #[arg(long, value_name = "NAME")]
    experiment: Option<String>,
    #[arg(long, value_name = "N")]
    nodes: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    fast_error_rate: Option<f64>,
    #[arg(long)]
    slow_error_rate: Option<f64>,
    /// Successful connection delay range
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_range)]
    delay_ms: Option<[f64; 2]>,
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_range)]
    fast_delay_ms: Option<[f64; 2]>,
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_range)]
    slow_delay_ms: Option<[f64; 2]>,
    /// Per-contact concurrency overhead
    #[arg(long)]
    gamma_ms: Option<f64>,
    /// Which contact counters the overhead is charged on: callee, caller or both
    #[arg(long, value_parser = parse_scope)]
    overhead_scope: Option<OverheadScope>,
    /// Samples to provide (seeding)
    #[arg(long)]
    samples: Option<usize>,
    /// Concurrent lookups per set (sampling, hops)
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    sets: Option<usize>,
    #[arg(long)]
    seeders: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run this many consecutive seeds, each in its own subdirectory
    #[arg(long)]
    repeat: Option<u32>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("not a number: {v:?}"))
    };
    Ok([num(lo)?, num(hi)?])
}

fn parse_scope(s: &str) -> Result<OverheadScope, String> {
    match s {
        "callee" => Ok(OverheadScope::Callee),
        "caller" => Ok(OverheadScope::Caller),
        "both" => Ok(OverheadScope::Both),
        _ => Err(format!("expected callee, caller or both, got {s:?}")),
    }
}

impl Args {
    fn overrides(&self) -> Result<ConfigFile, Error> {
        let mut f = ConfigFile::default();
        f.experiment.name = self
            .experiment
            .as_deref()
            .map(ExperimentKind::parse)
            .transpose()?;
        f.experiment.seed = self.seed;
        f.experiment.repeat = self.repeat;
        f.experiment.output_dir = self.out.clone();
        f.network.node_count = self.nodes;
        f.network.fast_error_rate = self.fast_error_rate;
        f.network.slow_error_rate = self.slow_error_rate;
        f.network.conn_delay_ms = self.delay_ms;
        f.network.fast_delay_ms = self.fast_delay_ms;
        f.network.slow_delay_ms = self.slow_delay_ms;
        f.network.gamma_ms = self.gamma_ms;
        f.network.overhead_scope = self.overhead_scope;
        f.dht.k = self.k;
        f.dht.alpha = self.alpha;
        f.dht.beta = self.beta;
        f.workload.sample_count = self.samples;
        f.workload.queries_per_node = self.queries;
        f.workload.sets = self.sets;
        f.workload.seeders = self.seeders;
        Ok(f)
    }

    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let base = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        base.merge(self.overrides()?).resolve()
    }
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    run_all(cfg, |out| println!("{}", out.summary()))
        .with_context(|| format!("experiment {} failed", cfg.experiment_id))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match args.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("dhtsim: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dhtsim: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
