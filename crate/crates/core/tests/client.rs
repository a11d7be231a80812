use std::collections::BTreeMap;

use dhtsim_core::netsim::{DelayRange, NetworkParams, NodeIndex, OverheadScope};
use dhtsim_core::{
    xor_distance, DhtParams, Id256, NodeId, OpRecord, OpRequest, Population, SampleKey, Simulation,
    ValueId,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn network(n: usize) -> NetworkParams {
    NetworkParams {
        node_count: n,
        ..NetworkParams::default()
    }
}

fn simulation(n: usize, seed: u64, net: NetworkParams) -> Simulation {
    let pop = Population::generate(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Simulation::new(pop, DhtParams::default(), net, seed).unwrap()
}

/// Exhaustive sort of the whole population, origin excluded.
fn brute_force_closest(pop: &Population, origin: NodeId, key: &Id256, n: usize) -> Vec<NodeId> {
    let mut all: Vec<NodeId> = pop.ids().iter().copied().filter(|&i| i != origin).collect();
    all.sort_by_key(|id| xor_distance(&id.0, key));
    all.truncate(n);
    all
}

fn check_invariants(r: &OpRecord) {
    assert!(r.end_us >= r.start_us);
    assert_eq!(r.contacted, r.hops);
    assert!(r.failed_fast + r.failed_slow <= r.contacted);
}

#[test]
fn two_node_network_finds_the_other_node_in_one_hop() {
    let mut sim = simulation(2, 1, network(2));
    let ids = sim.population().ids().to_vec();
    let (closest, rec) = sim
        .lookup_nodes(ids[0], &Id256::random(&mut ChaCha8Rng::seed_from_u64(9)))
        .unwrap();
    assert_eq!(closest, vec![ids[1]]);
    assert_eq!(rec.hops, 1);
    assert!(rec.success);
}

#[test]
fn lookup_nodes_matches_global_oracle_at_zero_errors() {
    let mut sim = simulation(500, 2, network(500));
    let pop = sim.population().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let origin = pop.ids()[rng.gen_range(0..pop.len())];
        let key = Id256::random(&mut rng);
        let (closest, rec) = sim.lookup_nodes(origin, &key).unwrap();
        assert_eq!(closest, brute_force_closest(&pop, origin, &key, 20));
        check_invariants(&rec);
    }
}

#[test]
fn unknown_origin_is_an_error() {
    let mut sim = simulation(50, 4, network(50));
    let stranger = NodeId(Id256::random(&mut ChaCha8Rng::seed_from_u64(99)));
    assert!(sim.lookup_nodes(stranger, &Id256::default()).is_err());
    assert!(sim
        .start(
            OpRequest::LookupNodes,
            NodeIndex(50),
            &Id256::default(),
            0,
            0
        )
        .is_err());
}

#[test]
fn missing_value_is_not_found() {
    let mut sim = simulation(300, 5, network(300));
    let origin = sim.population().ids()[7];
    let (value, rec) = sim
        .lookup_value(origin, &SampleKey::derive(1, 0, 0))
        .unwrap();
    assert_eq!(value, None);
    assert!(!rec.success);
    check_invariants(&rec);
}

#[test]
fn value_on_first_queried_neighbor_takes_one_hop() {
    let net = NetworkParams {
        node_count: 300,
        conn_delay: DelayRange::fixed(100_000),
        ..NetworkParams::default()
    };
    let mut sim = simulation(300, 6, net);
    let ids = sim.population().ids().to_vec();
    let mut checked = 0;
    for &origin in ids.iter().take(20) {
        let ix = sim.node_index(&origin).unwrap();
        let neighbor = sim.table_of(ix).next().unwrap();
        // keyed on the neighbor itself: it is the origin's closest entry and the global closest
        let key = neighbor.0;
        sim.place(&key, ValueId(checked));
        if sim.holds(ix, &key) {
            continue;
        }
        let (v, rec) = sim.lookup_value(origin, &key).unwrap();
        assert_eq!(v, Some(ValueId(checked)));
        assert_eq!(rec.hops, 1);
        assert_eq!(rec.duration_us(), 100_000);
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn provide_then_lookup_from_many_origins() {
    let mut sim = simulation(1000, 7, network(1000));
    let ids = sim.population().ids().to_vec();
    let key = SampleKey::derive(9, 4, 4);
    let (stored, rec) = sim.provide(ids[0], &key, ValueId(42)).unwrap();
    assert_eq!(stored.len(), 20);
    assert_eq!(rec.replicas(), 20);
    assert_eq!(
        stored,
        brute_force_closest(sim.population(), ids[0], &key.bits, 20)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let origin = ids[rng.gen_range(0..ids.len())];
        let (v, rec) = sim.lookup_value(origin, &key).unwrap();
        assert_eq!(v, Some(ValueId(42)));
        assert!(rec.success);
    }
}

#[test]
fn origin_holding_the_value_answers_locally() {
    let mut sim = simulation(200, 10, network(200));
    let key = SampleKey::derive(3, 3, 3);
    let holder = sim.place(&key, ValueId(5))[0];
    let id = sim.population().get(holder.get());
    let (v, rec) = sim.lookup_value(id, &key).unwrap();
    assert_eq!(v, Some(ValueId(5)));
    assert_eq!(rec.hops, 0);
    assert_eq!(rec.duration_us(), 0);
}

fn concurrent_batch(gamma_us: u64, fer: f64) -> Vec<OpRecord> {
    let n = 2000;
    let net = NetworkParams {
        node_count: n,
        fast_error_rate: fer,
        slow_error_rate: 0.02,
        gamma_us,
        ..NetworkParams::default()
    };
    let mut sim = simulation(n, 11, net);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..200u32 {
        let key = SampleKey::derive(1, i, 0);
        sim.place(&key, ValueId(i));
    }
    for i in 0..200u32 {
        let key = SampleKey::derive(1, i, 0);
        let origin = NodeIndex(rng.gen_range(0..n as u32));
        let req = if i % 2 == 0 {
            OpRequest::LookupValue
        } else {
            OpRequest::LookupNodes
        };
        sim.start(req, origin, &key, 0, 0).unwrap();
    }
    sim.run().unwrap();
    sim.take_results().into_iter().map(|r| r.record).collect()
}

#[test]
fn hops_do_not_depend_on_gamma() {
    let base = concurrent_batch(0, 0.1);
    for gamma in [100, 1000] {
        let other = concurrent_batch(gamma, 0.1);
        let hops = |v: &[OpRecord]| {
            v.iter()
                .map(|r| (r.op_id, r.hops, r.failed_fast))
                .collect::<Vec<_>>()
        };
        assert_eq!(hops(&base), hops(&other), "gamma {gamma}");
    }
}

#[test]
fn batch_duration_grows_with_gamma() {
    let total = |g| {
        concurrent_batch(g, 0.1)
            .iter()
            .map(|r| r.duration_us())
            .sum::<u64>()
    };
    let t0 = total(0);
    let t1 = total(100);
    let t2 = total(1000);
    assert!(t0 < t1 && t1 < t2, "{t0} {t1} {t2}");
}

#[test]
fn caller_scope_penalizes_a_busy_origin_more_than_callee_scope() {
    let run = |scope| {
        let n = 1000;
        let net = NetworkParams {
            node_count: n,
            gamma_us: 2000,
            overhead_scope: scope,
            ..NetworkParams::default()
        };
        let mut sim = simulation(n, 13, net);
        for i in 0..100u32 {
            sim.start(
                OpRequest::LookupNodes,
                NodeIndex(0),
                &SampleKey::derive(2, i, 0),
                0,
                0,
            )
            .unwrap();
        }
        sim.run().unwrap();
        sim.take_results()
            .iter()
            .map(|r| r.record.end_us)
            .max()
            .unwrap()
    };
    assert!(run(OverheadScope::Both) > run(OverheadScope::Callee));
}

#[test]
fn identical_seeds_give_identical_records() {
    let a = concurrent_batch(50, 0.2);
    let b = concurrent_batch(50, 0.2);
    assert_eq!(a, b);
}

#[test]
fn failures_only_appear_with_nonzero_rates() {
    let with = concurrent_batch(0, 0.3);
    assert!(with.iter().map(|r| r.failed_fast).sum::<u32>() > 0);
    let mut sim = simulation(500, 16, network(500));
    for i in 0..50u32 {
        sim.start(
            OpRequest::LookupNodes,
            NodeIndex(i),
            &SampleKey::derive(0, i, 0),
            0,
            0,
        )
        .unwrap();
    }
    sim.run().unwrap();
    for r in sim.take_results() {
        assert_eq!(r.record.failed_fast + r.record.failed_slow, 0);
    }
}

#[test]
fn zero_delay_network_completes_in_zero_time() {
    let net = NetworkParams {
        node_count: 300,
        conn_delay: DelayRange::fixed(0),
        ..NetworkParams::default()
    };
    let mut sim = simulation(300, 14, net);
    let origin = sim.population().ids()[0];
    let (_, rec) = sim
        .provide(origin, &SampleKey::derive(0, 0, 0), ValueId(0))
        .unwrap();
    assert_eq!(rec.duration_us(), 0);
    assert_eq!(rec.replicas(), 20);
}

#[test]
fn stored_counts_match_provides() {
    let mut sim = simulation(400, 15, network(400));
    let origin = sim.population().ids()[3];
    let mut replicas = 0;
    for i in 0..30u32 {
        let (stored, _) = sim
            .provide(origin, &SampleKey::derive(5, i, 1), ValueId(i))
            .unwrap();
        replicas += stored.len();
    }
    let counts = sim.stored_counts();
    assert_eq!(counts.iter().sum::<usize>(), replicas);
    let mut by_node: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, c) in counts.iter().enumerate() {
        if *c > 0 {
            by_node.insert(i, *c);
        }
    }
    assert!(by_node.values().all(|&c| c <= 30));
}

#[test]
fn mismatched_node_count_is_rejected() {
    let pop = Population::generate(10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(Simulation::new(pop, DhtParams::default(), network(11), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn records_satisfy_invariants(
        seed in 0u64..1000,
        fer in 0.0f64..0.5,
        ser in 0.0f64..0.3,
        gamma in 0u64..500,
    ) {
        let n = 150;
        let net = NetworkParams {
            node_count: n,
            fast_error_rate: fer,
            slow_error_rate: ser,
            gamma_us: gamma,
            ..NetworkParams::default()
        };
        let mut sim = simulation(n, seed, net);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        for i in 0..30u32 {
            let key = SampleKey::derive(seed, i, 0);
            let origin = NodeIndex(rng.gen_range(0..n as u32));
            let req = match i % 3 {
                0 => OpRequest::LookupNodes,
                1 => OpRequest::LookupValue,
                _ => OpRequest::Provide(ValueId(i)),
            };
            sim.start(req, origin, &key, rng.gen_range(0..1_000_000), 0).unwrap();
        }
        sim.run().unwrap();
        let results = sim.take_results();
        prop_assert_eq!(results.len(), 30);
        let mut replicas = 0;
        for r in &results {
            check_invariants(&r.record);
            prop_assert!(r.record.replicas() <= 20);
            prop_assert!(r.closest.len() <= 20);
            replicas += r.record.replicas();
        }
        prop_assert_eq!(sim.stored_counts().iter().sum::<usize>(), replicas);
    }
}
