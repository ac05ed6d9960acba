//! Fixture builders shared by the criterion benches.

use halosim_core::comm::FetchLedger;
use halosim_core::config::{build_world, RunConfig};
use halosim_core::ingest::GeneratorSpec;
use halosim_core::pipeline::World;
use halosim_core::prefetch::{initialize_prefetcher, AccessBackend, PolicyParams, PrefetchState};
use halosim_core::sampler::{epoch_order, next_batch, sample_block, SampledBlock};

/// Mid-size power-law world: 2 partitions, quarter-sized buffers.
pub fn bench_world(num_nodes: usize) -> World {
    let mut cfg = RunConfig {
        run_id: "bench".into(),
        train_fraction: 0.2,
        epochs: 1,
        policy: PolicyParams {
            fraction: 0.25,
            decay: 0.995,
            interval: 8,
            eviction: true,
            clamp_swap_scores: false,
        },
        ..RunConfig::default()
    };
    cfg.graph.generate = Some(GeneratorSpec::BarabasiAlbert {
        num_nodes,
        attachment: 5,
        rng_seed: 1234,
    });
    cfg.graph.feature_dim = 32;
    cfg.partitioning.num_partitions = 2;
    cfg.sampling.fanouts = vec![10, 10];
    cfg.sampling.batch_size = 32;
    build_world(&cfg).expect("bench world")
}

/// Prefetcher driven to one step short of an eviction round, plus the block
/// whose preparation triggers the round.
pub struct EvictionFixture {
    pub world: World,
    pub state: PrefetchState,
    pub trigger: SampledBlock,
}

pub fn eviction_fixture(backend: AccessBackend) -> EvictionFixture {
    let world = bench_world(4_000);
    let spec = world.trainers[0].clone();
    let partition = &world.pg.partitions[spec.partition as usize];
    let source = world.feature_source();
    let mut ledger = FetchLedger::default();
    let (mut state, _) = initialize_prefetcher(
        partition,
        &world.pg.graph,
        spec.id,
        world.policy,
        backend,
        &source,
        &world.cost,
        &mut ledger,
    )
    .expect("prefetcher init");

    let order = epoch_order(&spec.train_nodes, 0, spec.id, world.seed);
    let interval = world.policy.interval;
    let block_at = |step: u64| {
        let seeds = next_batch(&order, world.batch_size, step as usize).expect("enough batches");
        sample_block(partition, &world.pg.graph, seeds, &world.fanouts, world.seed, spec.id, step)
    };
    for step in 0..interval - 1 {
        state
            .prepare_step(&block_at(step), partition, &source, &world.cost, &mut ledger)
            .expect("warmup step");
    }
    let trigger = block_at(interval - 1);
    EvictionFixture { world, state, trigger }
}

/// Seed batch plus its world, for sampling benches.
pub struct SampleFixture {
    pub world: World,
    pub seeds: Vec<halosim_core::NodeId>,
}

pub fn sample_fixture() -> SampleFixture {
    let world = bench_world(4_000);
    let spec = &world.trainers[0];
    let order = epoch_order(&spec.train_nodes, 0, spec.id, world.seed);
    let seeds = next_batch(&order, world.batch_size, 0).expect("first batch").to_vec();
    SampleFixture { world, seeds }
}
