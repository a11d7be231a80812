//! Build the network described by an [`ExperimentConfig`], run it and write
//! the artifacts.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{OpRecord, Simulation};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::metrics::{
    cdf, export_cdf, export_records, load_histogram, Cdf, ExperimentAggregate, Percentiles,
    RecordRow, RecordStats, SeedingStats,
};
use crate::netsim::{format_ms, us_to_ms, Micros};
use crate::routing::Population;
use crate::workload::{
    run_sampling, run_seeding, seed_block_directly, slot_budget_check, DasBlock, LookupKind,
    OriginPolicy, SamplingSpec, SeedingSpec, SLOT_US,
};

pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const CONFIG_FILE: &str = "config.toml";

const STREAM_POPULATION: u64 = 0;
const STREAM_BLOCK: u64 = 1;
const STREAM_WORKLOAD: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything one run produces, before it is written out.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<RecordRow>,
    pub cdfs: Vec<(String, Cdf)>,
    pub aggregate: ExperimentAggregate,
}

impl RunOutput {
    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        let pct =
            |p: Option<Percentiles>, f: fn(&Percentiles) -> f64| p.as_ref().map_or(f64::NAN, f);
        format!(
            "{} seed {}: {} ops, hops p50 {} p99 {}, duration p50 {} ms p99 {} ms, total {} ms, slot ratio {:.2}",
            a.experiment_id,
            a.seed,
            a.op_count,
            pct(a.hops, |p| p.p50),
            pct(a.hops, |p| p.p99),
            pct(a.duration_ms, |p| p.p50),
            pct(a.duration_ms, |p| p.p99),
            a.total_duration_ms,
            a.slot_ratio,
        )
    }

    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = dir.join(CONFIG_FILE);
        std::fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;
        export_records(&self.rows, &dir.join(RECORDS_FILE))?;
        for (name, c) in &self.cdfs {
            export_cdf(name, c, &dir.join(format!("cdf_{name}.csv")))?;
        }
        self.aggregate.write(&dir.join(AGGREGATE_FILE))
    }
}

fn push_cdf(out: &mut Vec<(String, Cdf)>, name: &str, values: &[f64]) -> Option<Percentiles> {
    let c = cdf(values).ok()?;
    let p = Percentiles::of(&c);
    out.push((name.to_string(), c));
    Some(p)
}

fn ms(r: &OpRecord) -> f64 {
    us_to_ms(r.duration_us())
}

/// Run the experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let pop = Population::generate(
        cfg.network.node_count,
        &mut stream(cfg.seed, STREAM_POPULATION),
    )?;
    let mut sim = Simulation::new(pop, cfg.dht, cfg.network.clone(), cfg.seed)?;
    let block = DasBlock::build(
        1,
        cfg.block_rows,
        cfg.block_cols,
        &mut stream(cfg.seed, STREAM_BLOCK),
    );
    let mut rng = stream(cfg.seed, STREAM_WORKLOAD);
    let mut cdfs = Vec::new();

    let (records, sets, total_us, seeding, loads) = match cfg.experiment {
        ExperimentKind::Sampling | ExperimentKind::Hops => {
            let lookup = if cfg.experiment == ExperimentKind::Hops {
                LookupKind::Nodes
            } else {
                seed_block_directly(&mut sim, &block);
                LookupKind::Value
            };
            let spec = SamplingSpec {
                queries_per_node: cfg.queries_per_node,
                sets: cfg.sets,
                origin: OriginPolicy::RandomPerSet,
                lookup,
            };
            let out = run_sampling(&mut sim, &spec, &block, &mut rng)?;
            let total = out.total_duration_us();
            let set_ms: Vec<f64> = out.sets.iter().map(|s| us_to_ms(s.duration_us())).collect();
            let incomplete = out.incomplete_sets();
            let loads = sim.load().counts().to_vec();
            (out.records, Some((set_ms, incomplete)), total, None, loads)
        }
        ExperimentKind::Seeding => {
            let spec = SeedingSpec {
                sample_count: cfg.sample_count,
                seeders: cfg.seeders,
            };
            let out = run_seeding(&mut sim, &spec, &block, &mut rng)?;
            let stats = SeedingStats {
                seeders: out.seeders.len(),
                total_replicas: out.total_replicas(),
                mean_stored_per_node: out.mean_stored(),
                max_stored_per_node: out.stored_counts.iter().copied().max().unwrap_or(0),
                table_mean_load: out.table_mean_load,
                other_mean_load: out.other_mean_load,
            };
            let stored: Vec<f64> = out.stored_counts.iter().map(|&c| c as f64).collect();
            let total = out.total_duration_us();
            let loads = out.contact_load;
            (out.records, None, total, Some((stats, stored)), loads)
        }
    };

    let rows: Vec<RecordRow> = records
        .iter()
        .map(|r| RecordRow::from_record(&cfg.experiment_id, r))
        .collect();
    let stats = RecordStats::from_rows(&rows);
    let hops: Vec<f64> = records.iter().map(|r| r.hops as f64).collect();
    let durations: Vec<f64> = records.iter().map(ms).collect();
    push_cdf(&mut cdfs, "hops", &hops);
    push_cdf(&mut cdfs, "duration_ms", &durations);
    let (set_count, incomplete_sets, set_duration_ms) = match sets {
        Some((set_ms, incomplete)) => {
            let p = push_cdf(&mut cdfs, "set_duration_ms", &set_ms);
            (set_ms.len(), incomplete, p)
        }
        None => (0, 0, None),
    };
    let seeding = seeding.map(|(s, stored)| {
        push_cdf(&mut cdfs, "stored_per_node", &stored);
        s
    });
    let load_values: Vec<f64> = loads.iter().map(|&l| l as f64).collect();
    push_cdf(&mut cdfs, "contact_load", &load_values);

    let budget = slot_budget_check(total_us, SLOT_US);
    let aggregate = ExperimentAggregate {
        experiment_id: cfg.experiment_id.clone(),
        experiment: cfg.experiment.as_str().to_string(),
        seed: cfg.seed,
        config: cfg.to_file(),
        op_count: stats.op_count,
        success_rate: stats.success_rate,
        hops: stats.hops,
        duration_ms: stats.duration_ms,
        set_count,
        incomplete_sets,
        set_duration_ms,
        seeding,
        load_histogram: load_histogram(&loads),
        total_duration_ms: total_ms(total_us),
        slot_ratio: budget.ratio,
        slot_fits: budget.fits,
    };
    Ok(RunOutput {
        rows,
        cdfs,
        aggregate,
    })
}

fn total_ms(us: Micros) -> f64 {
    format_ms(us).parse().expect("formatted milliseconds")
}

/// Run and write into `cfg.output_dir`.
pub fn run_to_dir(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = execute(cfg)?;
    out.write(cfg, &cfg.output_dir)?;
    Ok(out)
}

/// Run every repetition: a single run writes into `output_dir`, repeated
/// runs into one `seed-<seed>` subdirectory each. `on_done` sees each run as
/// it finishes.
pub fn run_all(cfg: &ExperimentConfig, mut on_done: impl FnMut(&RunOutput)) -> Result<()> {
    if cfg.repeat <= 1 {
        on_done(&run_to_dir(cfg)?);
        return Ok(());
    }
    for i in 0..cfg.repeat {
        let out = run_to_dir(&cfg.repetition(i))?;
        on_done(&out);
    }
    Ok(())
}
