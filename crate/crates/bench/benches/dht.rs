use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dhtsim_core::netsim::{NetworkParams, NodeIndex};
use dhtsim_core::{
    BucketFill, DhtParams, Id256, OpRequest, Population, RoutingTable, SampleKey, Simulation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn population(n: usize) -> Population {
    Population::generate(n, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap()
}

fn table_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("table_build");
    for n in [1_000, 12_000] {
        let pop = population(n);
        let local = pop.get(0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pop, |b, pop| {
            b.iter(|| RoutingTable::build(local, pop, 20, BucketFill::Random, 1).unwrap())
        });
    }
    group.finish();
}

fn closest(c: &mut Criterion) {
    let pop = population(12_000);
    let table = RoutingTable::build(pop.get(0), &pop, 20, BucketFill::Random, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let keys: Vec<Id256> = (0..256).map(|_| Id256::random(&mut rng)).collect();
    let mut i = 0;
    c.bench_function("table_closest_20", |b| {
        b.iter(|| {
            i = (i + 1) % keys.len();
            table.closest(black_box(&keys[i]), 20)
        })
    });
}

fn lookup_batch(c: &mut Criterion) {
    let n = 2_000;
    let net = NetworkParams {
        node_count: n,
        fast_error_rate: 0.1,
        ..NetworkParams::default()
    };
    let mut sim = Simulation::new(population(n), DhtParams::default(), net, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut round = 0u64;
    c.bench_function("lookup_nodes_batch_100", |b| {
        b.iter(|| {
            round += 1;
            sim.reset_batch();
            let at = sim.now();
            for i in 0..100u32 {
                let origin = NodeIndex(rng.gen_range(0..n as u32));
                sim.start(
                    OpRequest::LookupNodes,
                    origin,
                    &SampleKey::derive(round, i, 0),
                    at,
                    0,
                )
                .unwrap();
            }
            sim.run().unwrap();
            sim.take_results().len()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = table_build, closest, lookup_batch
}
criterion_main!(benches);
