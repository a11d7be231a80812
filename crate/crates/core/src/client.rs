//! Kademlia client state machines: α-parallel iterative lookups for nodes and
//! values, and the provide operation, interleaved on one virtual clock.
//!
//! Every operation owns a private RNG stream derived from the simulation seed
//! and its op id, so the outcomes an operation draws depend only on its own
//! sequence of connection attempts. Responses are consumed in the order of
//! their γ-free completion times (dispatch time plus sampled base delay); a
//! response is only consumed once it has actually arrived and every response
//! ordered before it has been consumed. With γ = 0 this is exactly the
//! arrival order. With γ > 0 the traversal (and so the hop count) stays the
//! same while all timings stretch.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::id::{xor_distance, AsId, Distance, Id256, NodeId};
use crate::netsim::{
    connect, ContactLoad, Micros, NetworkParams, NodeIndex, OutcomeKind, VirtualClock,
};
use crate::routing::{select_closest, BucketFill, Population, RoutingTable};

/// When an iterative lookup stops.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Termination {
    /// The `n` closest known non-failed candidates have all answered.
    Converged(usize),
    /// Standard Kademlia convergence: the `k` closest have all answered.
    KClosest,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct DhtParams {
    /// Replication factor and bucket size.
    pub k: usize,
    /// Concurrent in-flight queries per lookup.
    pub alpha: usize,
    /// Closest peers a queried node returns.
    pub beta: usize,
    pub termination: Termination,
    pub bucket_fill: BucketFill,
}

impl Default for DhtParams {
    fn default() -> Self {
        DhtParams {
            k: 20,
            alpha: 3,
            beta: 20,
            termination: Termination::Converged(3),
            bucket_fill: BucketFill::Random,
        }
    }
}

impl DhtParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("k", self.k), ("alpha", self.alpha), ("beta", self.beta)] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if let Termination::Converged(0) = self.termination {
            return Err(Error::config("resiliency", "must be at least 1"));
        }
        Ok(())
    }

    fn converge_count(&self) -> usize {
        match self.termination {
            Termination::Converged(n) => n,
            Termination::KClosest => self.k,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum OpType {
    LookupValue,
    LookupNodes,
    Provide,
}

impl OpType {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpType::LookupValue => "lookup_value",
            OpType::LookupNodes => "lookup_nodes",
            OpType::Provide => "provide",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lookup_value" => Ok(OpType::LookupValue),
            "lookup_nodes" => Ok(OpType::LookupNodes),
            "provide" => Ok(OpType::Provide),
            other => Err(Error::Parse(format!("unknown op type {other:?}"))),
        }
    }
}

/// Opaque handle of a stored value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ValueId(pub u32);

/// Trace of one finished operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub op_id: u64,
    pub set_id: u32,
    pub op_type: OpType,
    pub key: Id256,
    pub origin: NodeId,
    /// Completed query round trips, failed or not.
    pub hops: u32,
    pub contacted: u32,
    pub failed_fast: u32,
    pub failed_slow: u32,
    pub start_us: Micros,
    pub end_us: Micros,
    pub success: bool,
    /// Nodes that acknowledged a store (provides only), closest first.
    pub stored_on: Vec<NodeId>,
}

impl OpRecord {
    pub fn duration_us(&self) -> Micros {
        self.end_us - self.start_us
    }

    pub fn replicas(&self) -> usize {
        self.stored_on.len()
    }
}

/// Result of a finished operation.
#[derive(Clone, Debug)]
pub struct OpResult {
    pub record: OpRecord,
    /// The k closest non-failed nodes the lookup ended with, closest first.
    pub closest: Vec<NodeId>,
    pub value: Option<ValueId>,
}

#[derive(Clone, Copy, Debug)]
pub enum OpRequest {
    LookupNodes,
    LookupValue,
    Provide(ValueId),
}

impl OpRequest {
    fn op_type(&self) -> OpType {
        match self {
            OpRequest::LookupNodes => OpType::LookupNodes,
            OpRequest::LookupValue => OpType::LookupValue,
            OpRequest::Provide(_) => OpType::Provide,
        }
    }
}

/// Idealized value storage: unbounded, no expiry.
#[derive(Default, Debug)]
struct ValueStore {
    by_key: HashMap<Id256, ValueId>,
    held: Vec<HashSet<u32>>,
}

impl ValueStore {
    fn new(nodes: usize) -> Self {
        ValueStore {
            by_key: HashMap::new(),
            held: vec![HashSet::new(); nodes],
        }
    }

    fn holds(&self, node: u32, key: &Id256) -> Option<ValueId> {
        let v = self.by_key.get(key)?;
        self.held[node as usize].contains(&v.0).then_some(*v)
    }

    fn insert(&mut self, node: u32, key: Id256, value: ValueId) {
        self.by_key.insert(key, value);
        self.held[node as usize].insert(value.0);
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum CandState {
    Unqueried,
    InFlight,
    Succeeded,
    Failed,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    distance: Distance,
    node: u32,
    state: CandState,
}

#[derive(Clone, Copy, Debug)]
struct InFlight {
    seq: u32,
    node: u32,
    /// γ-free completion time used to order response processing.
    logical_done: Micros,
    kind: OutcomeKind,
    arrived: bool,
}

#[derive(Debug)]
enum Phase {
    Lookup,
    Storing { pending: usize, acked: Vec<u32> },
}

#[derive(Debug)]
struct OpState {
    id: u32,
    set_id: u32,
    request: OpRequest,
    origin: u32,
    target: Id256,
    rng: ChaCha8Rng,
    candidates: Vec<Candidate>,
    in_flight: Vec<InFlight>,
    store_targets: Vec<u32>,
    next_seq: u32,
    logical_now: Micros,
    hops: u32,
    failed_fast: u32,
    failed_slow: u32,
    start_us: Micros,
    phase: Phase,
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Start(u32),
    Reply { op: u32, seq: u32 },
    StoreAck { op: u32, node: u32, ok: bool },
}

/// A static DHT network plus the event loop that runs operations over it.
pub struct Simulation {
    population: Population,
    tables: Vec<Box<[u32]>>,
    dht: DhtParams,
    net: NetworkParams,
    load: ContactLoad,
    clock: VirtualClock<Event>,
    store: ValueStore,
    seed: u64,
    ops: Vec<Option<Box<OpState>>>,
    finished: Vec<OpResult>,
    scratch: Vec<(Distance, u32)>,
}

impl Simulation {
    /// Build every routing table from global knowledge of `population`.
    pub fn new(
        population: Population,
        dht: DhtParams,
        net: NetworkParams,
        seed: u64,
    ) -> Result<Self> {
        dht.validate()?;
        net.validate()?;
        let n = population.len();
        if net.node_count != n {
            return Err(Error::config(
                "node_count",
                format!("{} does not match the population size {n}", net.node_count),
            ));
        }
        let mut tables = Vec::with_capacity(n);
        for &id in population.ids() {
            let table = RoutingTable::build(id, &population, dht.k, dht.bucket_fill, seed)?;
            let entries: Box<[u32]> = table
                .entries()
                .map(|e| population.index_of(&e).expect("entry from population") as u32)
                .collect();
            tables.push(entries);
        }
        Ok(Simulation {
            load: ContactLoad::new(n),
            store: ValueStore::new(n),
            population,
            tables,
            dht,
            net,
            clock: VirtualClock::new(),
            seed,
            ops: Vec::new(),
            finished: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn dht_params(&self) -> &DhtParams {
        &self.dht
    }

    pub fn net_params(&self) -> &NetworkParams {
        &self.net
    }

    pub fn now(&self) -> Micros {
        self.clock.now()
    }

    pub fn load(&self) -> &ContactLoad {
        &self.load
    }

    /// Zero all contact counters; called between experiment batches.
    pub fn reset_batch(&mut self) {
        self.load.reset_batch();
    }

    pub fn table_of(&self, node: NodeIndex) -> impl Iterator<Item = NodeId> + '_ {
        self.tables[node.get()]
            .iter()
            .map(|&i| self.population.get(i as usize))
    }

    pub fn node_index(&self, id: &NodeId) -> Result<NodeIndex> {
        self.population
            .index_of(id)
            .map(|i| NodeIndex(i as u32))
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Store `value` directly on the `k` globally closest nodes to `key`,
    /// bypassing the network.
    pub fn place(&mut self, key: &impl AsId, value: ValueId) -> Vec<NodeIndex> {
        let key = key.as_id();
        let holders = self.population.closest_indices(&key, self.dht.k);
        for &h in &holders {
            self.store.insert(h as u32, key, value);
        }
        holders.into_iter().map(|i| NodeIndex(i as u32)).collect()
    }

    pub fn holds(&self, node: NodeIndex, key: &impl AsId) -> bool {
        self.store.holds(node.0, &key.as_id()).is_some()
    }

    /// Number of values held per node.
    pub fn stored_counts(&self) -> Vec<usize> {
        self.store.held.iter().map(HashSet::len).collect()
    }

    /// Schedule an operation to start at virtual time `at_us`.
    pub fn start(
        &mut self,
        request: OpRequest,
        origin: NodeIndex,
        key: &impl AsId,
        at_us: Micros,
        set_id: u32,
    ) -> Result<u64> {
        if origin.get() >= self.population.len() {
            return Err(Error::UnknownNode(origin.0.to_string()));
        }
        let id = self.ops.len() as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(id));
        self.clock.schedule(at_us, Event::Start(id))?;
        self.ops.push(Some(Box::new(OpState {
            id,
            set_id,
            request,
            origin: origin.0,
            target: key.as_id(),
            rng,
            candidates: Vec::new(),
            in_flight: Vec::new(),
            store_targets: Vec::new(),
            next_seq: 0,
            logical_now: at_us,
            hops: 0,
            failed_fast: 0,
            failed_slow: 0,
            start_us: at_us,
            phase: Phase::Lookup,
        })));
        Ok(u64::from(id))
    }

    /// Run the event loop until no events remain.
    pub fn run(&mut self) -> Result<()> {
        while let Some((_, event)) = self.clock.dispatch() {
            match event {
                Event::Start(op) => self.on_start(op)?,
                Event::Reply { op, seq } => self.on_reply(op, seq)?,
                Event::StoreAck { op, node, ok } => self.on_store_ack(op, node, ok),
            }
        }
        Ok(())
    }

    /// Results finished since the last call, ordered by op id.
    pub fn take_results(&mut self) -> Vec<OpResult> {
        let mut out = std::mem::take(&mut self.finished);
        out.sort_by_key(|r| r.record.op_id);
        out
    }

    /// Run one iterative node lookup to completion.
    pub fn lookup_nodes(
        &mut self,
        origin: NodeId,
        target: &impl AsId,
    ) -> Result<(Vec<NodeId>, OpRecord)> {
        let r = self.run_single(OpRequest::LookupNodes, origin, target)?;
        Ok((r.closest, r.record))
    }

    /// Run one value lookup to completion; `None` when not found.
    pub fn lookup_value(
        &mut self,
        origin: NodeId,
        key: &impl AsId,
    ) -> Result<(Option<ValueId>, OpRecord)> {
        let r = self.run_single(OpRequest::LookupValue, origin, key)?;
        Ok((r.value, r.record))
    }

    /// Run one provide to completion.
    pub fn provide(
        &mut self,
        origin: NodeId,
        key: &impl AsId,
        value: ValueId,
    ) -> Result<(Vec<NodeId>, OpRecord)> {
        let r = self.run_single(OpRequest::Provide(value), origin, key)?;
        Ok((r.record.stored_on.clone(), r.record))
    }

    fn run_single(
        &mut self,
        request: OpRequest,
        origin: NodeId,
        key: &impl AsId,
    ) -> Result<OpResult> {
        let origin = self.node_index(&origin)?;
        let at = self.clock.now();
        let id = self.start(request, origin, key, at, 0)?;
        self.run()?;
        let mut results = self.take_results();
        let pos = results
            .iter()
            .position(|r| r.record.op_id == id)
            .expect("operation finished");
        Ok(results.swap_remove(pos))
    }

    fn on_start(&mut self, op: u32) -> Result<()> {
        let mut state = self.ops[op as usize].take().expect("op exists");
        let now = self.clock.now();
        state.start_us = now;
        state.logical_now = now;
        if let OpRequest::LookupValue = state.request {
            if let Some(v) = self.store.holds(state.origin, &state.target) {
                self.finish(state, Some(v));
                return Ok(());
            }
        }
        let origin = state.origin;
        let target = state.target;
        let seeds = self.closest_in_table(origin, &target);
        for (distance, node) in seeds {
            insert_candidate(&mut state.candidates, distance, node);
        }
        self.advance(state)
    }

    fn on_reply(&mut self, op: u32, seq: u32) -> Result<()> {
        let Some(mut state) = self.ops[op as usize].take() else {
            // Reply to an operation that already finished.
            return Ok(());
        };
        if let Some(f) = state.in_flight.iter_mut().find(|f| f.seq == seq) {
            f.arrived = true;
        }
        while let Some(pos) = next_in_order(&state.in_flight) {
            if !state.in_flight[pos].arrived {
                break;
            }
            let reply = state.in_flight.swap_remove(pos);
            state.logical_now = reply.logical_done;
            state.hops += 1;
            let cand = state
                .candidates
                .iter_mut()
                .find(|c| c.node == reply.node)
                .expect("queried node is a candidate");
            match reply.kind {
                OutcomeKind::FastError => {
                    cand.state = CandState::Failed;
                    state.failed_fast += 1;
                }
                OutcomeKind::SlowError => {
                    cand.state = CandState::Failed;
                    state.failed_slow += 1;
                }
                OutcomeKind::Success => {
                    cand.state = CandState::Succeeded;
                    if let OpRequest::LookupValue = state.request {
                        if let Some(v) = self.store.holds(reply.node, &state.target) {
                            self.finish(state, Some(v));
                            return Ok(());
                        }
                    }
                    let target = state.target;
                    let returned = self.closest_in_table(reply.node, &target);
                    for (distance, node) in returned {
                        if node != state.origin {
                            insert_candidate(&mut state.candidates, distance, node);
                        }
                    }
                }
            }
            match self.step(state)? {
                Some(s) => state = s,
                None => return Ok(()),
            }
        }
        self.ops[op as usize] = Some(state);
        Ok(())
    }

    fn on_store_ack(&mut self, op: u32, node: u32, ok: bool) {
        let mut state = self.ops[op as usize].take().expect("op exists");
        let target = state.target;
        let Phase::Storing { pending, acked } = &mut state.phase else {
            unreachable!("store ack outside storing phase");
        };
        if ok {
            if let OpRequest::Provide(v) = state.request {
                self.store.insert(node, target, v);
            }
            acked.push(node);
        }
        *pending -= 1;
        if *pending == 0 {
            self.finish(state, None);
        } else {
            self.ops[op as usize] = Some(state);
        }
    }

    fn advance(&mut self, state: Box<OpState>) -> Result<()> {
        if let Some(state) = self.step(state)? {
            let id = state.id as usize;
            self.ops[id] = Some(state);
        }
        Ok(())
    }

    /// Check termination, then refill the in-flight slots. Returns the state
    /// back when the lookup continues.
    fn step(&mut self, mut state: Box<OpState>) -> Result<Option<Box<OpState>>> {
        if converged(&state.candidates, self.dht.converge_count()) {
            self.end_lookup(state)?;
            return Ok(None);
        }
        while state.in_flight.len() < self.dht.alpha {
            let Some(cand) = state
                .candidates
                .iter_mut()
                .find(|c| c.state == CandState::Unqueried)
            else {
                break;
            };
            cand.state = CandState::InFlight;
            let node = cand.node;
            let out = connect(
                NodeIndex(state.origin),
                NodeIndex(node),
                &mut state.rng,
                &mut self.load,
                &self.net,
            )?;
            let seq = state.next_seq;
            state.next_seq += 1;
            state.in_flight.push(InFlight {
                seq,
                node,
                logical_done: state.logical_now + out.base_us,
                kind: out.kind,
                arrived: false,
            });
            self.clock
                .schedule_in(out.delay_us(), Event::Reply { op: state.id, seq });
        }
        if state.in_flight.is_empty() {
            self.end_lookup(state)?;
            return Ok(None);
        }
        Ok(Some(state))
    }

    fn end_lookup(&mut self, mut state: Box<OpState>) -> Result<()> {
        let closest: Vec<u32> = state
            .candidates
            .iter()
            .filter(|c| c.state != CandState::Failed)
            .take(self.dht.k)
            .map(|c| c.node)
            .collect();
        match state.request {
            OpRequest::Provide(_) if !closest.is_empty() => {
                for &node in &closest {
                    let out = connect(
                        NodeIndex(state.origin),
                        NodeIndex(node),
                        &mut state.rng,
                        &mut self.load,
                        &self.net,
                    )?;
                    self.clock.schedule_in(
                        out.delay_us(),
                        Event::StoreAck {
                            op: state.id,
                            node,
                            ok: out.is_success(),
                        },
                    );
                }
                state.phase = Phase::Storing {
                    pending: closest.len(),
                    acked: Vec::new(),
                };
                state.store_targets = closest;
                state.in_flight.clear();
                let id = state.id as usize;
                self.ops[id] = Some(state);
            }
            _ => {
                state.store_targets = closest;
                self.finish(state, None);
            }
        }
        Ok(())
    }

    fn finish(&mut self, state: Box<OpState>, value: Option<ValueId>) {
        let ids = &self.population;
        let stored_on = match &state.phase {
            Phase::Storing { acked, .. } => {
                // closest first
                state
                    .store_targets
                    .iter()
                    .filter(|n| acked.contains(n))
                    .map(|&n| ids.get(n as usize))
                    .collect()
            }
            Phase::Lookup => Vec::new(),
        };
        let success = match state.request {
            OpRequest::LookupValue => value.is_some(),
            OpRequest::LookupNodes => !state.store_targets.is_empty(),
            OpRequest::Provide(_) => !stored_on.is_empty(),
        };
        let record = OpRecord {
            op_id: u64::from(state.id),
            set_id: state.set_id,
            op_type: state.request.op_type(),
            key: state.target,
            origin: ids.get(state.origin as usize),
            hops: state.hops,
            contacted: state.hops,
            failed_fast: state.failed_fast,
            failed_slow: state.failed_slow,
            start_us: state.start_us,
            end_us: self.clock.now(),
            success,
            stored_on,
        };
        let closest = state
            .store_targets
            .iter()
            .map(|&n| ids.get(n as usize))
            .collect();
        self.finished.push(OpResult {
            record,
            closest,
            value,
        });
    }

    /// `closest(target, beta)` over the routing table of `node`.
    fn closest_in_table(&mut self, node: u32, target: &Id256) -> Vec<(Distance, u32)> {
        let ids = self.population.ids();
        let scratch = &mut self.scratch;
        scratch.clear();
        scratch.extend(
            self.tables[node as usize]
                .iter()
                .map(|&e| (xor_distance(&ids[e as usize], target), e)),
        );
        select_closest(scratch, self.dht.beta, |&(d, _)| d);
        scratch.clone()
    }
}

fn insert_candidate(candidates: &mut Vec<Candidate>, distance: Distance, node: u32) {
    match candidates.binary_search_by(|c| c.distance.cmp(&distance)) {
        Ok(_) => {}
        Err(pos) => candidates.insert(
            pos,
            Candidate {
                distance,
                node,
                state: CandState::Unqueried,
            },
        ),
    }
}

fn converged(candidates: &[Candidate], n: usize) -> bool {
    let mut live = candidates
        .iter()
        .filter(|c| c.state != CandState::Failed)
        .take(n);
    let mut any = false;
    let all = live.all(|c| {
        any = true;
        c.state == CandState::Succeeded
    });
    any && all
}

fn next_in_order(in_flight: &[InFlight]) -> Option<usize> {
    in_flight
        .iter()
        .enumerate()
        .min_by_key(|(_, f)| (f.logical_done, f.seq))
        .map(|(i, _)| i)
}
