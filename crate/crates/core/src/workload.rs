//! Data availability sampling scenarios: the block model and the sampling
//! and seeding experiments driven over a [`Simulation`].

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::client::{OpRecord, OpRequest, Simulation, ValueId};
use crate::error::{Error, Result};
use crate::id::SampleKey;
use crate::netsim::{Micros, NodeIndex};

/// Data bytes per sample.
pub const SAMPLE_DATA_BYTES: usize = 512;
/// Proof bytes per sample.
pub const SAMPLE_PROOF_BYTES: usize = 48;
pub const SAMPLE_BYTES: usize = SAMPLE_DATA_BYTES + SAMPLE_PROOF_BYTES;
/// Rows and columns of the extended block grid.
pub const BLOCK_DIM: u32 = 512;
pub const SLOT_US: Micros = 12_000_000;

/// The extended block: a `rows x cols` grid of keyed samples with opaque
/// payloads. Samples are addressed row-major.
pub struct DasBlock {
    block_id: u64,
    rows: u32,
    cols: u32,
    keys: Vec<SampleKey>,
    payloads: Vec<u8>,
}

impl DasBlock {
    pub fn build<R: RngCore + ?Sized>(block_id: u64, rows: u32, cols: u32, rng: &mut R) -> Self {
        let count = rows as usize * cols as usize;
        let mut keys = Vec::with_capacity(count);
        for row in 0..rows {
            for col in 0..cols {
                keys.push(SampleKey::derive(block_id, row, col));
            }
        }
        let mut payloads = vec![0u8; count * SAMPLE_BYTES];
        rng.fill_bytes(&mut payloads);
        DasBlock {
            block_id,
            rows,
            cols,
            keys,
            payloads,
        }
    }

    /// A full 512 x 512 block.
    pub fn standard<R: RngCore + ?Sized>(block_id: u64, rng: &mut R) -> Self {
        Self::build(block_id, BLOCK_DIM, BLOCK_DIM, rng)
    }

    pub fn block_id(&self) -> u64 {
        self.block_id
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, index: usize) -> &SampleKey {
        &self.keys[index]
    }

    pub fn keys(&self) -> &[SampleKey] {
        &self.keys
    }

    pub fn payload(&self, index: usize) -> &[u8] {
        &self.payloads[index * SAMPLE_BYTES..(index + 1) * SAMPLE_BYTES]
    }

    /// Payload of a value returned by a lookup.
    pub fn value_payload(&self, value: ValueId) -> &[u8] {
        self.payload(value.0 as usize)
    }
}

/// Place every sample on the k nodes globally closest to its key.
pub fn seed_block_directly(sim: &mut Simulation, block: &DasBlock) {
    for (i, key) in block.keys().iter().enumerate() {
        sim.place(key, ValueId(i as u32));
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OriginPolicy {
    Fixed(NodeIndex),
    RandomPerSet,
}

/// What each query of a set asks for.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum LookupKind {
    /// Retrieve the sample value.
    #[default]
    Value,
    /// Find the k closest peers to the sample key.
    Nodes,
}

#[derive(Clone, Copy, Debug)]
pub struct SamplingSpec {
    pub queries_per_node: usize,
    pub sets: usize,
    pub origin: OriginPolicy,
    pub lookup: LookupKind,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            queries_per_node: 80,
            sets: 100,
            origin: OriginPolicy::RandomPerSet,
            lookup: LookupKind::Value,
        }
    }
}

/// Per-set aggregate of one batch of concurrent lookups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetSummary {
    pub set_id: u32,
    pub origin: NodeIndex,
    pub start_us: Micros,
    pub end_us: Micros,
    pub retrieved: usize,
    pub queries: usize,
}

impl SetSummary {
    pub fn duration_us(&self) -> Micros {
        self.end_us - self.start_us
    }

    pub fn complete(&self) -> bool {
        self.retrieved == self.queries
    }
}

#[derive(Debug)]
pub struct SamplingOutcome {
    pub records: Vec<OpRecord>,
    pub sets: Vec<SetSummary>,
}

impl SamplingOutcome {
    /// Fraction of lookups that retrieved their sample.
    pub fn success_rate(&self) -> f64 {
        let ok = self.records.iter().filter(|r| r.success).count();
        ok as f64 / self.records.len().max(1) as f64
    }

    /// Sets in which at least one sample could not be retrieved.
    pub fn incomplete_sets(&self) -> usize {
        self.sets.iter().filter(|s| !s.complete()).count()
    }

    /// Duration of the slowest set.
    pub fn total_duration_us(&self) -> Micros {
        self.sets
            .iter()
            .map(SetSummary::duration_us)
            .max()
            .unwrap_or(0)
    }
}

/// Run `spec.sets` consecutive batches; in each, one origin starts
/// `queries_per_node` concurrent lookups for distinct random samples.
/// Contact counters are reset between sets. A query counts as retrieved when
/// it succeeds.
pub fn run_sampling<R: Rng + ?Sized>(
    sim: &mut Simulation,
    spec: &SamplingSpec,
    block: &DasBlock,
    rng: &mut R,
) -> Result<SamplingOutcome> {
    if spec.queries_per_node == 0 {
        return Err(Error::config("queries_per_node", "must be at least 1"));
    }
    if spec.queries_per_node > block.len() {
        return Err(Error::config(
            "queries_per_node",
            format!("block only has {} samples", block.len()),
        ));
    }
    let n = sim.population().len() as u32;
    let mut records = Vec::with_capacity(spec.sets * spec.queries_per_node);
    let mut sets = Vec::with_capacity(spec.sets);
    let request = match spec.lookup {
        LookupKind::Value => OpRequest::LookupValue,
        LookupKind::Nodes => OpRequest::LookupNodes,
    };
    for set in 0..spec.sets {
        sim.reset_batch();
        let origin = match spec.origin {
            OriginPolicy::Fixed(o) => o,
            OriginPolicy::RandomPerSet => NodeIndex(rng.gen_range(0..n)),
        };
        let start = sim.now();
        for sample in index::sample(rng, block.len(), spec.queries_per_node) {
            sim.start(request, origin, block.key(sample), start, set as u32)?;
        }
        sim.run()?;
        let results = sim.take_results();
        let start_us = results
            .iter()
            .map(|r| r.record.start_us)
            .min()
            .unwrap_or(start);
        let end_us = results
            .iter()
            .map(|r| r.record.end_us)
            .max()
            .unwrap_or(start);
        let retrieved = results.iter().filter(|r| r.record.success).count();
        sets.push(SetSummary {
            set_id: set as u32,
            origin,
            start_us,
            end_us,
            retrieved,
            queries: results.len(),
        });
        records.extend(results.into_iter().map(|r| r.record));
    }
    Ok(SamplingOutcome { records, sets })
}

#[derive(Clone, Copy, Debug)]
pub struct SeedingSpec {
    /// Number of samples to provide, taken in row-major order.
    pub sample_count: usize,
    pub seeders: usize,
}

impl SeedingSpec {
    /// Round-robin assignment of samples to seeders: sample `i` goes to
    /// seeder `i % seeders`.
    pub fn assignment(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.seeders.max(1)];
        for i in 0..self.sample_count {
            parts[i % self.seeders.max(1)].push(i);
        }
        parts
    }
}

#[derive(Debug)]
pub struct SeedingOutcome {
    pub records: Vec<OpRecord>,
    pub seeders: Vec<NodeIndex>,
    pub start_us: Micros,
    pub end_us: Micros,
    /// Values held per node after seeding.
    pub stored_counts: Vec<usize>,
    /// Contact counter of every node at the end of the batch.
    pub contact_load: Vec<u64>,
    /// Mean contact load of the nodes in the seeders' routing tables.
    pub table_mean_load: f64,
    /// Mean contact load of every other non-seeder node.
    pub other_mean_load: f64,
}

impl SeedingOutcome {
    pub fn total_duration_us(&self) -> Micros {
        self.end_us - self.start_us
    }

    pub fn total_replicas(&self) -> usize {
        self.records.iter().map(OpRecord::replicas).sum()
    }

    pub fn mean_stored(&self) -> f64 {
        let total: usize = self.stored_counts.iter().sum();
        total as f64 / self.stored_counts.len().max(1) as f64
    }
}

/// Every seeder launches its share of provides concurrently at the current
/// virtual time. Seeders are distinct random nodes.
pub fn run_seeding<R: Rng + ?Sized>(
    sim: &mut Simulation,
    spec: &SeedingSpec,
    block: &DasBlock,
    rng: &mut R,
) -> Result<SeedingOutcome> {
    if spec.seeders == 0 {
        return Err(Error::config("seeders", "must be at least 1"));
    }
    if spec.sample_count > block.len() {
        return Err(Error::config(
            "sample_count",
            format!("block only has {} samples", block.len()),
        ));
    }
    let n = sim.population().len();
    if spec.seeders > n {
        return Err(Error::config("seeders", format!("only {n} nodes exist")));
    }
    let seeders: Vec<NodeIndex> = index::sample(rng, n, spec.seeders)
        .into_iter()
        .map(|i| NodeIndex(i as u32))
        .collect();
    sim.reset_batch();
    let start = sim.now();
    for (seeder, samples) in seeders.iter().zip(spec.assignment()) {
        for i in samples {
            sim.start(
                OpRequest::Provide(ValueId(i as u32)),
                *seeder,
                block.key(i),
                start,
                0,
            )?;
        }
    }
    sim.run()?;
    let records: Vec<OpRecord> = sim.take_results().into_iter().map(|r| r.record).collect();
    let end = records.iter().map(|r| r.end_us).max().unwrap_or(start);

    let contact_load = sim.load().counts().to_vec();
    let mut in_table = vec![false; n];
    let mut is_seeder = vec![false; n];
    for s in &seeders {
        is_seeder[s.get()] = true;
        for id in sim.table_of(*s) {
            let i = sim.population().index_of(&id).expect("table entry");
            in_table[i] = true;
        }
    }
    let mean = |pick: &dyn Fn(usize) -> bool| {
        let (sum, count) = (0..n)
            .filter(|&i| pick(i))
            .fold((0u64, 0usize), |(s, c), i| (s + contact_load[i], c + 1));
        sum as f64 / count.max(1) as f64
    };
    let table_mean_load = mean(&|i| in_table[i] && !is_seeder[i]);
    let other_mean_load = mean(&|i| !in_table[i] && !is_seeder[i]);
    Ok(SeedingOutcome {
        records,
        seeders,
        start_us: start,
        end_us: end,
        stored_counts: sim.stored_counts(),
        contact_load,
        table_mean_load,
        other_mean_load,
    })
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SlotBudget {
    pub fits: bool,
    pub ratio: f64,
}

/// Compare a duration to the slot budget; a ratio of exactly 1 fits.
pub fn slot_budget_check(duration_us: Micros, slot_us: Micros) -> SlotBudget {
    let ratio = duration_us as f64 / slot_us as f64;
    SlotBudget {
        fits: duration_us <= slot_us,
        ratio,
    }
}
