//! Experiment configuration: a sectioned TOML file, optional overrides
//! from the command line, and the fully resolved [`ExperimentConfig`].
//!
//! ```toml
//! [experiment]
//! name = "seeding"          # sampling | seeding | hops
//! id = "seed-run"
//! seed = 1
//! repeat = 1
//! output_dir = "out"
//!
//! [network]
//! node_count = 12000
//! fast_error_rate = 0.0
//! slow_error_rate = 0.0
//! conn_delay_ms = [220.0, 420.0]
//! fast_delay_ms = [10.0, 50.0]
//! slow_delay_ms = [1000.0, 2000.0]
//! gamma_ms = 0.015
//! overhead_scope = "both"   # callee | caller | both
//!
//! [dht]
//! k = 20
//! alpha = 3
//! beta = 20
//! termination = "resiliency" # resiliency | k_closest
//! resiliency = 3
//! bucket_fill = "random"    # random | closest
//!
//! [workload]
//! block_rows = 512
//! block_cols = 512
//! sample_count = 262144
//! queries_per_node = 80
//! sets = 100
//! seeders = 1
//! ```
//!
//! Every key is optional; missing keys take the defaults above except
//! `experiment.name`, which is required.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{DhtParams, Termination};
use crate::error::{Error, Result};
use crate::netsim::{ms_to_us, us_to_ms, DelayRange, NetworkParams, OverheadScope};
use crate::routing::BucketFill;
use crate::workload::BLOCK_DIM;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sampling,
    Seeding,
    Hops,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Sampling => "sampling",
            ExperimentKind::Seeding => "seeding",
            ExperimentKind::Hops => "hops",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sampling" => Ok(ExperimentKind::Sampling),
            "seeding" => Ok(ExperimentKind::Seeding),
            "hops" => Ok(ExperimentKind::Hops),
            _ => Err(Error::config(
                "experiment.name",
                format!("unknown experiment {s:?} (sampling, seeding, hops)"),
            )),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    Resiliency,
    KClosest,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeat: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fast_error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow_error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conn_delay_ms: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fast_delay_ms: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow_delay_ms: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overhead_scope: Option<OverheadScope>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhtSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resiliency: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket_fill: Option<BucketFill>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_rows: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_cols: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries_per_node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sets: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeders: Option<usize>,
}

/// The configuration file as written, every key optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub dht: DhtSection,
    #[serde(default)]
    pub workload: WorkloadSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e.message())))
    }

    /// Layer `top` over `self`: every key set in `top` wins.
    pub fn merge(mut self, top: ConfigFile) -> Self {
        macro_rules! take {
            ($sec:ident: $($f:ident),*) => { $( if top.$sec.$f.is_some() { self.$sec.$f = top.$sec.$f; } )* };
        }
        take!(experiment: name, id, seed, repeat, output_dir);
        take!(network: node_count, fast_error_rate, slow_error_rate, conn_delay_ms, fast_delay_ms,
            slow_delay_ms, gamma_ms, overhead_scope);
        take!(dht: k, alpha, beta, termination, resiliency, bucket_fill);
        take!(workload: block_rows, block_cols, sample_count, queries_per_node, sets, seeders);
        self
    }

    /// Fill defaults and validate.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let experiment = e.name.ok_or_else(|| {
            Error::config(
                "experiment.name",
                "an experiment is required (sampling, seeding, hops)",
            )
        })?;
        let experiment_id =
            e.id.clone()
                .unwrap_or_else(|| experiment.as_str().to_string());
        if experiment_id.is_empty()
            || !experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::config(
                "experiment.id",
                "use letters, digits, '-', '_' or '.'",
            ));
        }
        let repeat = e.repeat.unwrap_or(1);
        if repeat == 0 {
            return Err(Error::config("experiment.repeat", "must be at least 1"));
        }

        let nd = NetworkParams::default();
        let n = &self.network;
        let gamma_ms = n.gamma_ms.unwrap_or(us_to_ms(nd.gamma_us));
        if !(gamma_ms >= 0.0 && gamma_ms.is_finite()) {
            return Err(Error::config(
                "network.gamma_ms",
                "must be a non-negative number",
            ));
        }
        let network = NetworkParams {
            node_count: n.node_count.unwrap_or(nd.node_count),
            fast_error_rate: n.fast_error_rate.unwrap_or(nd.fast_error_rate),
            slow_error_rate: n.slow_error_rate.unwrap_or(nd.slow_error_rate),
            conn_delay: range("network.conn_delay_ms", n.conn_delay_ms, nd.conn_delay)?,
            fast_delay: range("network.fast_delay_ms", n.fast_delay_ms, nd.fast_delay)?,
            slow_delay: range("network.slow_delay_ms", n.slow_delay_ms, nd.slow_delay)?,
            gamma_us: ms_to_us(gamma_ms),
            overhead_scope: n.overhead_scope.unwrap_or(nd.overhead_scope),
        };
        network.validate().map_err(|e| section("network", e))?;

        let dd = DhtParams::default();
        let d = &self.dht;
        let default_resiliency = match dd.termination {
            Termination::Converged(r) => r,
            Termination::KClosest => 3,
        };
        let resiliency = d.resiliency.unwrap_or(default_resiliency);
        let termination = match d.termination.unwrap_or(TerminationKind::Resiliency) {
            TerminationKind::Resiliency => Termination::Converged(resiliency),
            TerminationKind::KClosest => Termination::KClosest,
        };
        if resiliency == 0 {
            return Err(Error::config("dht.resiliency", "must be at least 1"));
        }
        let dht = DhtParams {
            k: d.k.unwrap_or(dd.k),
            alpha: d.alpha.unwrap_or(dd.alpha),
            beta: d.beta.unwrap_or(dd.beta),
            termination,
            bucket_fill: d.bucket_fill.unwrap_or(dd.bucket_fill),
        };
        dht.validate().map_err(|e| section("dht", e))?;

        let w = &self.workload;
        let block_rows = w.block_rows.unwrap_or(BLOCK_DIM);
        let block_cols = w.block_cols.unwrap_or(BLOCK_DIM);
        if block_rows == 0 {
            return Err(Error::config("workload.block_rows", "must be at least 1"));
        }
        if block_cols == 0 {
            return Err(Error::config("workload.block_cols", "must be at least 1"));
        }
        let block_len = block_rows as usize * block_cols as usize;
        let cfg = ExperimentConfig {
            experiment,
            experiment_id,
            seed: e.seed.unwrap_or(1),
            repeat,
            output_dir: e.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            network,
            dht,
            block_rows,
            block_cols,
            sample_count: w.sample_count.unwrap_or(block_len),
            queries_per_node: w.queries_per_node.unwrap_or(80),
            sets: w.sets.unwrap_or(100),
            seeders: w.seeders.unwrap_or(1),
        };
        let bounded = |key: &str, v: usize, lo: usize, hi: usize, what: &str| {
            if v < lo {
                Err(Error::config(key, format!("must be at least {lo}")))
            } else if v > hi {
                Err(Error::config(key, format!("{v} exceeds {what} ({hi})")))
            } else {
                Ok(())
            }
        };
        bounded(
            "workload.sample_count",
            cfg.sample_count,
            1,
            block_len,
            "the block size",
        )?;
        bounded(
            "workload.queries_per_node",
            cfg.queries_per_node,
            1,
            block_len,
            "the block size",
        )?;
        bounded("workload.sets", cfg.sets, 1, usize::MAX, "")?;
        bounded(
            "workload.seeders",
            cfg.seeders,
            1,
            cfg.network.node_count,
            "node_count",
        )?;
        Ok(cfg)
    }
}

fn range(key: &str, ms: Option<[f64; 2]>, default: DelayRange) -> Result<DelayRange> {
    let Some([lo, hi]) = ms else {
        return Ok(default);
    };
    if !(lo >= 0.0 && hi.is_finite()) {
        return Err(Error::config(key, "delays must be non-negative"));
    }
    if lo > hi {
        return Err(Error::config(key, format!("inverted range {lo}:{hi}")));
    }
    DelayRange::new(ms_to_us(lo), ms_to_us(hi))
}

fn section(name: &str, e: Error) -> Error {
    match e {
        Error::Config { key, reason } => Error::Config {
            key: format!("{name}.{key}"),
            reason,
        },
        other => other,
    }
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub experiment_id: String,
    pub seed: u64,
    pub repeat: u32,
    pub output_dir: PathBuf,
    pub network: NetworkParams,
    pub dht: DhtParams,
    pub block_rows: u32,
    pub block_cols: u32,
    pub sample_count: usize,
    pub queries_per_node: usize,
    pub sets: usize,
    pub seeders: usize,
}

fn ms_pair(r: DelayRange) -> Option<[f64; 2]> {
    Some([us_to_ms(r.min_us), us_to_ms(r.max_us)])
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        ConfigFile::parse(text)?.resolve()
    }

    /// Every key spelled out; parsing it yields `self` again.
    pub fn to_file(&self) -> ConfigFile {
        let n = &self.network;
        let d = &self.dht;
        let (termination, resiliency) = match d.termination {
            Termination::Converged(r) => (TerminationKind::Resiliency, r),
            Termination::KClosest => (TerminationKind::KClosest, 3),
        };
        ConfigFile {
            experiment: ExperimentSection {
                name: Some(self.experiment),
                id: Some(self.experiment_id.clone()),
                seed: Some(self.seed),
                repeat: Some(self.repeat),
                output_dir: Some(self.output_dir.clone()),
            },
            network: NetworkSection {
                node_count: Some(n.node_count),
                fast_error_rate: Some(n.fast_error_rate),
                slow_error_rate: Some(n.slow_error_rate),
                conn_delay_ms: ms_pair(n.conn_delay),
                fast_delay_ms: ms_pair(n.fast_delay),
                slow_delay_ms: ms_pair(n.slow_delay),
                gamma_ms: Some(us_to_ms(n.gamma_us)),
                overhead_scope: Some(n.overhead_scope),
            },
            dht: DhtSection {
                k: Some(d.k),
                alpha: Some(d.alpha),
                beta: Some(d.beta),
                termination: Some(termination),
                resiliency: Some(resiliency),
                bucket_fill: Some(d.bucket_fill),
            },
            workload: WorkloadSection {
                block_rows: Some(self.block_rows),
                block_cols: Some(self.block_cols),
                sample_count: Some(self.sample_count),
                queries_per_node: Some(self.queries_per_node),
                sets: Some(self.sets),
                seeders: Some(self.seeders),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }

    /// The configuration of repetition `i` of a repeated run.
    pub fn repetition(&self, i: u32) -> ExperimentConfig {
        let seed = self.seed.wrapping_add(i as u64);
        ExperimentConfig {
            seed,
            repeat: 1,
            output_dir: self.output_dir.join(format!("seed-{seed}")),
            ..self.clone()
        }
    }
}
