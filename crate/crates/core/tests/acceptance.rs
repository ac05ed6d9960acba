//! Acceptance suite: one test per release criterion, each ending with an
//! explicit `ACCEPTANCE <name>: PASS` line (visible with `--nocapture`).
//! A failing criterion fails its test; nothing here is tunable at run time.

mod common;

use common::*;

use halosim_core::comm::{CostModel, FeatureSource, FetchLedger};
use halosim_core::graph::node_feature;
use halosim_core::metrics::{windowed_trajectory, StepTiming};
use halosim_core::perf_model::{improvement_factor, prefetch_total_ns, scoring_overhead, ComponentTimes};
use halosim_core::pipeline::{run_baseline, run_prefetch, run_prefetch_wallclock};
use halosim_core::prefetch::{AccessBackend, PolicyParams};
use halosim_core::NodeId;

use std::sync::{Mutex, MutexGuard, PoisonError};

/// Some criteria measure wall-clock durations, so the suite runs one
/// criterion at a time regardless of harness thread count.
fn exclusive() -> MutexGuard<'static, ()> {
    static GATE: Mutex<()> = Mutex::new(());
    GATE.lock().unwrap_or_else(PoisonError::into_inner)
}

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

/// Exact binary exponentiation, independent of `powf`.
fn binpow(base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0f64;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

#[test]
fn criterion_01_eviction_threshold_law() {
    let _gate = exclusive();
    for &decay in &[0.9f64, 0.95, 0.995, 0.9995, 1.0] {
        for &interval in &[1u64, 2, 16, 32, 64, 128, 512, 1024] {
            let p = PolicyParams { decay, interval, ..PolicyParams::default() };
            let expected = binpow(decay, interval);
            let relative = (p.threshold() - expected).abs() / expected;
            assert!(
                relative <= 1e-12,
                "threshold({decay}, {interval}) = {} strays from the law's {expected}",
                p.threshold()
            );
        }
    }

    // Boundary behavior, with decay 0.5 so every per-step product is exact:
    // a buffered node that is never sampled sits exactly at the threshold on
    // the first round (survives: eviction is strictly below) and falls under
    // it by the second round (evicted).
    let inst = boundary_instance();
    let (mut engine, _) = inst.init_engine(AccessBackend::Dense);
    let survivor: NodeId = engine.buffered_nodes()[0];
    let outside: Vec<NodeId> = inst.pg.partitions[0]
        .halo_nodes
        .iter()
        .copied()
        .filter(|&n| n != survivor)
        .collect();
    let source = FeatureSource::new(&inst.pg, inst.feature_seed);
    let mut ledger = FetchLedger::default();
    let interval = inst.params.interval;
    for s in 1..=2 * interval {
        let block = inst.block(s, &outside);
        let prep = engine
            .prepare_step(&block, &inst.pg.partitions[0], &source, &CostModel::default(), &mut ledger)
            .expect("prepare");
        if s == interval {
            assert!(prep.eviction_round, "round fires every `interval` steps");
            assert_eq!(prep.evicted, 0, "score equal to the threshold survives");
            assert!(engine.contains(survivor));
            assert_eq!(engine.evict_score(survivor), Some(engine.alpha()));
        } else if s == 2 * interval {
            assert!(prep.eviction_round);
            assert_eq!(prep.evicted, 1, "first eviction lands strictly after `interval` unused steps");
            assert!(!engine.contains(survivor));
        } else {
            assert_eq!(prep.evicted, 0, "no eviction outside rounds (step {s})");
        }
    }
    pass("criterion_01_eviction_threshold_law");
}

/// Hand-shaped instance for the boundary check: one buffered halo node that
/// is never sampled, the rest sampled (and missed) every step.
fn boundary_instance() -> RandomInstance {
    use halosim_core::graph::{build_partitioned_graph, GlobalGraph, PartitionId};
    use std::collections::HashMap;
    // Locals 0..3, halo 3 (degree 2, buffered at capacity 1), halo 4.
    let graph =
        GlobalGraph::from_edges(5, &[(0, 1), (1, 2), (3, 0), (3, 1), (4, 0)], false, 8).unwrap();
    let ownership: HashMap<NodeId, PartitionId> =
        [(0, 0), (1, 0), (2, 0), (3, 1), (4, 1)].into_iter().collect();
    let pg = build_partitioned_graph(graph, &ownership, 2).unwrap();
    RandomInstance {
        pg,
        params: PolicyParams {
            fraction: 0.5,
            decay: 0.5,
            interval: 4,
            eviction: true,
            clamp_swap_scores: false,
        },
        steps: Vec::new(),
        feature_seed: 7,
    }
}

#[test]
fn criterion_02_reference_equivalence() {
    let _gate = exclusive();
    let mut rng = test_rng(0x5eed_0002);
    for i in 0..1000 {
        let inst = RandomInstance::generate(&mut rng);
        let partition = &inst.pg.partitions[0];
        let (mut engine, _) = inst.init_engine(AccessBackend::Dense);
        let mut reference = ReferencePrefetcher::new(partition, &inst.pg.graph, &inst.params);
        assert_eq!(engine.buffered_nodes(), reference.buffered_nodes(), "instance {i}: init fill");

        let source = FeatureSource::new(&inst.pg, inst.feature_seed);
        let mut ledger = FetchLedger::default();
        for (s, halos) in inst.steps.iter().enumerate() {
            let block = inst.block(s as u64, halos);
            let prep = engine
                .prepare_step(&block, partition, &source, &CostModel::default(), &mut ledger)
                .expect("prepare");
            let expect = reference.step(halos, partition, &inst.pg.graph);
            let at = format!("instance {i} step {s}");
            assert_eq!(prep.hits, expect.hits, "{at}: hits");
            assert_eq!(prep.misses, expect.misses, "{at}: misses");
            assert_eq!(prep.eviction_round, expect.round, "{at}: round trigger");
            assert_eq!(prep.evicted, expect.evicted.len() as u64, "{at}: evictions");
            assert_eq!(prep.replaced, expect.admitted.len() as u64, "{at}: admissions");
            assert_eq!(engine.buffered_nodes(), reference.buffered_nodes(), "{at}: buffer contents");
            for &h in &partition.halo_nodes {
                assert_eq!(
                    engine.access_score(h).to_bits(),
                    reference.access_score(h).to_bits(),
                    "{at}: access score of node {h}"
                );
                assert_eq!(
                    engine.evict_score(h).map(f64::to_bits),
                    reference.evict_score(h).map(f64::to_bits),
                    "{at}: eviction score of node {h}"
                );
            }
        }
    }
    pass("criterion_02_reference_equivalence");
}

#[test]
fn criterion_03_dense_and_compact_backends_agree() {
    let _gate = exclusive();
    let mut cfg = ba_config(10_000, 4, 2);
    cfg.run_id = "backend-parity".into();
    cfg.epochs = 5;
    cfg.train_fraction = 0.1;
    cfg.sampling.batch_size = 16;
    cfg.sampling.fanouts = vec![5, 10];
    cfg.policy = PolicyParams {
        fraction: 0.2,
        decay: 0.99,
        interval: 16,
        eviction: true,
        clamp_swap_scores: false,
    };
    let mut world = build(&cfg);

    world.backend = AccessBackend::Dense;
    let dense = run_prefetch(&world).expect("dense run");
    world.backend = AccessBackend::Compact;
    let compact = run_prefetch(&world).expect("compact run");

    assert!(!dense.steps.is_empty(), "the scenario must actually run");
    let mut dense_csv = Vec::new();
    dense.write_csv(&mut dense_csv).expect("dense csv");
    let mut compact_csv = Vec::new();
    compact.write_csv(&mut compact_csv).expect("compact csv");
    assert_eq!(dense_csv, compact_csv, "scoreboard backends must not change any output byte");
    pass("criterion_03_dense_and_compact_backends_agree");
}

#[test]
fn criterion_04_payload_matches_feature_oracle() {
    let _gate = exclusive();
    let mut rng = test_rng(0x5eed_0004);
    let mut checked = 0usize;
    while checked < 1000 {
        let inst = RandomInstance::generate(&mut rng);
        let partition = &inst.pg.partitions[0];
        let (mut engine, _) = inst.init_engine(AccessBackend::Compact);
        let source = FeatureSource::new(&inst.pg, inst.feature_seed);
        let mut ledger = FetchLedger::default();
        for (s, halos) in inst.steps.iter().enumerate() {
            let block = inst.block(s as u64, halos);
            let prep = engine
                .prepare_step(&block, partition, &source, &CostModel::default(), &mut ledger)
                .expect("prepare");
            let nodes: Vec<NodeId> = prep.payload.features.iter().map(|(n, _)| *n).collect();
            assert_eq!(nodes, block.sampled_nodes, "payload covers exactly the sampled block");
            let dim = inst.pg.graph.feature_dim();
            for (n, feat) in &prep.payload.features {
                assert_eq!(
                    feat,
                    &node_feature(*n, inst.feature_seed, dim),
                    "feature of node {n} at step {s} must match the oracle"
                );
            }
            checked += 1;
        }
    }
    pass("criterion_04_payload_matches_feature_oracle");
}

#[test]
fn criterion_05_fetch_ledger_identity_and_reduction() {
    let _gate = exclusive();
    let mut cfg = ba_config(6_000, 2, 1);
    cfg.run_id = "ledger".into();
    cfg.epochs = 8;
    cfg.train_fraction = 0.1;
    cfg.sampling.batch_size = 16;
    cfg.sampling.fanouts = vec![5, 10];
    // The reference operating point: quarter-sized buffer, slow decay,
    // eviction every 64 steps.
    cfg.policy = PolicyParams {
        fraction: 0.25,
        decay: 0.995,
        interval: 64,
        eviction: true,
        clamp_swap_scores: false,
    };
    let world = build(&cfg);

    let prefetch = run_prefetch(&world).expect("prefetch run");
    assert_fetch_identity(&prefetch);
    let baseline = run_baseline(&world).expect("baseline run");
    assert_fetch_identity(&baseline);

    let agg = prefetch.aggregates();
    let reduction = agg.fetch_reduction.expect("halo traffic present");
    assert!(
        reduction > 0.0,
        "the buffer must cut remote fetch volume on a skewed graph, got {reduction}"
    );
    assert!(agg.eviction_rounds > 0, "the scenario must exercise eviction");
    pass("criterion_05_fetch_ledger_identity_and_reduction");
}

#[test]
fn criterion_06_perf_model_matches_engine() {
    let _gate = exclusive();
    // Exact agreement: the closed evaluation over recorded rows reproduces
    // every trainer's schedule total bit for bit.
    let mut cfg = ba_config(3_000, 2, 2);
    cfg.run_id = "model".into();
    cfg.epochs = 3;
    cfg.train_fraction = 0.2;
    cfg.sampling.batch_size = 8;
    let world = build(&cfg);
    let m = run_prefetch(&world).expect("prefetch run");
    for t in &m.trainers {
        let timings: Vec<StepTiming> = m
            .steps
            .iter()
            .filter(|r| r.trainer == t.trainer)
            .map(|r| r.timing)
            .collect();
        let model = prefetch_total_ns(&timings, t.tail_prepare_ns.expect("tail"))
            .expect("model evaluation");
        assert_eq!(model, t.total_ns, "trainer {}: model and engine totals differ", t.trainer);
    }

    // Prediction: with transfer 0.4x of training and everything else free,
    // the improvement factor is 1.4 and the measured speedup matches.
    let cost = CostModel {
        rpc_latency_s: 0.4e-3,
        rpc_bandwidth_bytes_per_s: 1e18,
        copy_bandwidth_bytes_per_s: 1e18,
        lookup_cost_per_node_s: 0.0,
        scoring_cost_per_node_s: 0.0,
        sample_cost_per_node_s: 0.0,
        train_cost_fixed_s: 1e-3,
        train_cost_per_node_s: 0.0,
    };
    let policy = PolicyParams { fraction: 1.0, eviction: false, ..PolicyParams::default() };
    let world = alternating_world(64, cost, policy, 125, 4);
    let baseline = run_baseline(&world).expect("baseline run");
    let prefetch = run_prefetch(&world).expect("prefetch run");
    assert!(
        prefetch.steps.iter().filter(|r| r.trainer == 0).count() >= 500,
        "the speedup check needs a long run"
    );
    let measured = baseline.total_ns as f64 / prefetch.total_ns as f64;
    let predicted = improvement_factor(&ComponentTimes {
        sampling_s: 0.0,
        lookup_s: 0.0,
        scoring_s: 0.0,
        rpc_s: 0.4e-3,
        copy_s: 0.0,
        ddp_s: 1e-3,
    })
    .expect("factor");
    assert!((predicted.full - 1.4).abs() < 1e-12);
    assert!(
        (measured - predicted.full).abs() / predicted.full < 0.02,
        "measured speedup {measured} strays from predicted {}",
        predicted.full
    );
    pass("criterion_06_perf_model_matches_engine");
}

#[test]
fn criterion_07_perfect_overlap_totals() {
    let _gate = exclusive();
    // Preparation costs a few microseconds, training two milliseconds; the
    // pipeline must hide every preparation except the first.
    let cost = CostModel {
        rpc_latency_s: 1e-5,
        train_cost_fixed_s: 2e-3,
        train_cost_per_node_s: 0.0,
        ..CostModel::default()
    };
    let policy = PolicyParams { fraction: 1.0, eviction: false, ..PolicyParams::default() };
    let world = alternating_world(32, cost, policy, 3, 4);
    let m = run_prefetch(&world).expect("prefetch run");
    assert!(!m.steps.is_empty());
    for t in &m.trainers {
        let rows: Vec<_> = m.steps.iter().filter(|r| r.trainer == t.trainer).collect();
        let first_prepare = rows[0].timing.prepare_ns;
        let training: u64 = rows.iter().map(|r| r.timing.ddp_ns).sum();
        assert_eq!(
            t.total_ns,
            first_prepare + training,
            "trainer {}: total must be the first preparation plus pure training",
            t.trainer
        );
        assert!(rows.iter().all(|r| r.timing.stall_ns == 0), "no training step may wait");
    }
    assert_eq!(m.aggregates().overlap_efficiency, 1.0);
    pass("criterion_07_perfect_overlap_totals");
}

#[test]
fn criterion_08_hit_rate_trajectory_improves() {
    let _gate = exclusive();
    // Skewed-degree graph with a sparse train set: fan-out dilution makes
    // halos next to low-degree locals hotter than halos next to hubs, so the
    // degree-ranked initial fill mispredicts and adaptation has headroom.
    // Slow decay with a long interval purges never-sampled entries without
    // churning the frequently hit ones.
    let mut cfg = ba_config(6_000, 2, 1);
    cfg.run_id = "trajectory".into();
    cfg.train_fraction = 0.03;
    cfg.sampling.batch_size = 12;
    cfg.sampling.fanouts = vec![3, 3];
    cfg.epochs = 150;
    cfg.policy = PolicyParams {
        fraction: 0.15,
        decay: 0.995,
        interval: 64,
        eviction: true,
        clamp_swap_scores: false,
    };
    let world = build(&cfg);
    let adaptive = run_prefetch(&world).expect("adaptive run");
    assert!(adaptive.steps.len() >= 2000, "need a long run, got {} steps", adaptive.steps.len());

    let mut frozen_world = world.clone();
    frozen_world.policy.eviction = false;
    let frozen = run_prefetch(&frozen_world).expect("frozen run");

    // Ten windows, each a tenth of the per-trainer step range.
    let window = (adaptive.steps.iter().map(|s| s.step).max().expect("steps") + 1) / 10;
    let trajectory = windowed_trajectory(&adaptive.steps, window);
    let early = trajectory.first().and_then(|p| p.hit_rate).expect("early window");
    let late = trajectory.last().and_then(|p| p.hit_rate).expect("late window");
    assert!(
        late > early,
        "hit rate must rise as the buffer adapts: first window {early}, last window {late}"
    );

    let frozen_late = windowed_trajectory(&frozen.steps, window)
        .last()
        .and_then(|p| p.hit_rate)
        .expect("frozen late window");
    assert!(
        late > frozen_late,
        "eviction must end above the frozen buffer: {late} vs {frozen_late}"
    );
    println!("  windows {early:.4} -> {late:.4}; frozen final window {frozen_late:.4}");
    pass("criterion_08_hit_rate_trajectory_improves");
}

#[test]
fn criterion_09_decay_and_interval_quadrants() {
    let _gate = exclusive();
    let mut cfg = ba_config(3_000, 2, 1);
    cfg.run_id = "quadrants".into();
    cfg.train_fraction = 0.4;
    cfg.sampling.batch_size = 12;
    cfg.sampling.fanouts = vec![4, 4];
    cfg.epochs = 25; // 1250 steps per trainer: even interval 1024 gets a round
    cfg.policy = PolicyParams {
        fraction: 0.2,
        decay: 0.99,
        interval: 64,
        eviction: true,
        clamp_swap_scores: false,
    };

    let run_with = |decay: f64, interval: u64| {
        let mut c = cfg.clone();
        c.policy.decay = decay;
        c.policy.interval = interval;
        run_prefetch(&build(&c)).expect("quadrant run").aggregates()
    };

    // Faster decay churns harder: more evictions per round.
    let fast = run_with(0.95, 64);
    let slow = run_with(0.9995, 64);
    assert!(fast.eviction_rounds > 0 && slow.eviction_rounds > 0);
    let fast_rate = fast.evicted as f64 / fast.eviction_rounds as f64;
    let slow_rate = slow.evicted as f64 / slow.eviction_rounds as f64;
    assert!(
        fast_rate >= slow_rate,
        "decay 0.95 must evict at least as much per round as 0.9995: {fast_rate} vs {slow_rate}"
    );

    // Shorter intervals sweep the scoreboards more often: higher cumulative
    // eviction lookup cost.
    let frequent = run_with(0.99, 16);
    let rare = run_with(0.99, 1024);
    assert!(frequent.eviction_rounds > rare.eviction_rounds);
    assert!(
        frequent.eviction_lookup_ns > rare.eviction_lookup_ns,
        "interval 16 must spend more on scoreboard sweeps than 1024: {} vs {}",
        frequent.eviction_lookup_ns,
        rare.eviction_lookup_ns
    );
    pass("criterion_09_decay_and_interval_quadrants");
}

#[test]
fn criterion_10_wallclock_overlap_bound() {
    let _gate = exclusive();
    // Injected training delays (200 us) dominate preparation (~20 us) ten to
    // one, so measured wall time must stay within 10% of the ideal: first
    // preparation plus the sum of injected delays. The run is long enough
    // (~160 ms of injected delay per trainer) to amortize scheduler hiccups,
    // and the measurement gets three attempts on top of that: a pipeline
    // without genuine overlap would sit near 2x ideal on every attempt, so
    // retries cannot mask one.
    let cost = CostModel {
        rpc_latency_s: 10e-6,
        sample_cost_per_node_s: 1e-6,
        train_cost_fixed_s: 200e-6,
        train_cost_per_node_s: 0.0,
        ..CostModel::default()
    };
    let policy = PolicyParams {
        fraction: 0.5,
        decay: 0.9,
        interval: 8,
        eviction: true,
        clamp_swap_scores: false,
    };
    let world = alternating_world(32, cost, policy, 400, 4);

    let worst_ratio = |m: &halosim_core::metrics::RunMetrics| -> f64 {
        m.trainers
            .iter()
            .map(|t| {
                let injected: u64 = m
                    .steps
                    .iter()
                    .filter(|r| r.trainer == t.trainer)
                    .map(|r| r.timing.ddp_ns)
                    .sum();
                let ideal =
                    injected + t.first_prepare_wall_ns.expect("measured first preparation");
                t.total_ns as f64 / ideal as f64
            })
            .fold(0.0_f64, f64::max)
    };

    let mut wall = run_prefetch_wallclock(&world).expect("wallclock run");
    assert!(!wall.steps.is_empty());
    let mut worst = worst_ratio(&wall);
    for attempt in 1..3 {
        if worst <= 1.1 {
            break;
        }
        eprintln!("wallclock attempt {attempt} measured ratio {worst:.3}, retrying");
        wall = run_prefetch_wallclock(&world).expect("wallclock run");
        worst = worst_ratio(&wall);
    }
    assert!(
        worst <= 1.1,
        "slowest trainer stayed at {worst:.3}x the no-stall ideal across three attempts"
    );

    // Same logical run as the virtual engine.
    let virt = run_prefetch(&world).expect("virtual run");
    assert_eq!(virt.steps.len(), wall.steps.len());
    for (a, b) in virt.steps.iter().zip(&wall.steps) {
        assert_eq!(
            (a.trainer, a.step, a.hits, a.misses, a.evicted, a.replaced),
            (b.trainer, b.step, b.hits, b.misses, b.evicted, b.replaced),
            "wallclock must replay the virtual decision sequence"
        );
    }
    assert_fetch_identity(&wall);
    pass("criterion_10_wallclock_overlap_bound");
}

#[test]
fn criterion_11_scoring_overhead_value() {
    let _gate = exclusive();
    let v = scoring_overhead(1.0, 10.0, 10).expect("overhead");
    assert!(
        (v - 2.59374246).abs() <= 1e-9,
        "ten compounding 10% intervals on unit preparation: got {v}"
    );
    pass("criterion_11_scoring_overhead_value");
}
