//! Shared fixtures for the integration suites: an independent straight-line
//! reimplementation of the buffer policy, random instance generators, and
//! world builders with hand-checkable costs.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use halosim_core::comm::{CostModel, FeatureSource, FetchLedger};
use halosim_core::config::{self, RunConfig};
use halosim_core::graph::{
    build_partitioned_graph, select_train_nodes, GlobalGraph, NodeId, Partition, PartitionId,
    PartitionedGraph,
};
use halosim_core::ingest::GeneratorSpec;
use halosim_core::metrics::RunMetrics;
use halosim_core::pipeline::{TrainerSpec, World};
use halosim_core::prefetch::{
    initialize_prefetcher, AccessBackend, PolicyParams, PrefetchState,
};
use halosim_core::sampler::{FanoutSpec, SampledBlock};

/// What one policy step did, in a directly comparable shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub hits: u64,
    pub misses: u64,
    pub evicted: Vec<NodeId>,
    pub admitted: Vec<NodeId>,
    pub round: bool,
}

/// Straight-line reimplementation of the buffer policy, kept deliberately
/// naive: plain maps, no shared code with the engine beyond public types.
/// Score arithmetic applies the same f64 operations in the same order, so
/// comparisons against the engine can demand exact equality.
pub struct ReferencePrefetcher {
    capacity: usize,
    alpha: f64,
    decay: f64,
    interval: u64,
    eviction: bool,
    clamp: bool,
    steps: u64,
    /// node -> eviction score, buffer members only.
    buffered: BTreeMap<NodeId, f64>,
    /// halo node -> access score, every halo node.
    access: BTreeMap<NodeId, f64>,
}

impl ReferencePrefetcher {
    pub fn new(partition: &Partition, graph: &GlobalGraph, params: &PolicyParams) -> Self {
        let capacity = (params.fraction * partition.halo_nodes.len() as f64).ceil() as usize;
        let mut ranked: Vec<NodeId> = partition.halo_nodes.clone();
        ranked.sort_by(|&a, &b| {
            let da = partition.in_partition_degree(a, graph);
            let db = partition.in_partition_degree(b, graph);
            db.cmp(&da).then(a.cmp(&b))
        });
        let mut buffered = BTreeMap::new();
        let mut access: BTreeMap<NodeId, f64> =
            partition.halo_nodes.iter().map(|&n| (n, 0.0)).collect();
        for &n in ranked.iter().take(capacity) {
            buffered.insert(n, 1.0);
            access.insert(n, -1.0);
        }
        ReferencePrefetcher {
            capacity,
            alpha: params.decay.powf(params.interval as f64),
            decay: params.decay,
            interval: params.interval,
            eviction: params.eviction,
            clamp: params.clamp_swap_scores,
            steps: 0,
            buffered,
            access,
        }
    }

    pub fn buffered_nodes(&self) -> Vec<NodeId> {
        self.buffered.keys().copied().collect()
    }

    pub fn evict_score(&self, n: NodeId) -> Option<f64> {
        self.buffered.get(&n).copied()
    }

    pub fn access_score(&self, n: NodeId) -> f64 {
        self.access.get(&n).copied().unwrap_or(0.0)
    }

    pub fn step(
        &mut self,
        sampled_halos: &[NodeId],
        partition: &Partition,
        graph: &GlobalGraph,
    ) -> RefOutcome {
        self.steps += 1;
        let sampled: BTreeSet<NodeId> = sampled_halos.iter().copied().collect();
        let hits: Vec<NodeId> =
            sampled.iter().copied().filter(|n| self.buffered.contains_key(n)).collect();
        let misses: Vec<NodeId> =
            sampled.iter().copied().filter(|n| !self.buffered.contains_key(n)).collect();

        for (n, score) in self.buffered.iter_mut() {
            if !sampled.contains(n) {
                *score *= self.decay;
            }
        }
        for &m in &misses {
            *self.access.get_mut(&m).expect("miss is a halo node") += 1.0;
        }

        let round = self.eviction && self.capacity > 0 && self.steps % self.interval == 0;
        let mut evicted = Vec::new();
        let mut admitted = Vec::new();
        if round {
            let mut candidates: Vec<(NodeId, f64)> = self
                .buffered
                .iter()
                .filter(|(_, &s)| s < self.alpha)
                .map(|(&n, &s)| (n, s))
                .collect();
            candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

            let mut replacements: Vec<(NodeId, f64, u32)> = self
                .access
                .iter()
                .filter(|(n, &s)| !self.buffered.contains_key(n) && s >= 1.0)
                .map(|(&n, &s)| (n, s, partition.in_partition_degree(n, graph)))
                .collect();
            replacements.sort_by(|a, b| {
                b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0))
            });

            let k = candidates.len().min(replacements.len());
            for i in 0..k {
                let (out, out_score) = candidates[i];
                let (inn, inn_score, _) = replacements[i];
                self.buffered.remove(&out);
                self.access.insert(out, out_score);
                let admitted_score = if self.clamp { inn_score.min(1.0) } else { inn_score };
                self.buffered.insert(inn, admitted_score);
                self.access.insert(inn, -1.0);
                evicted.push(out);
                admitted.push(inn);
            }
        }
        RefOutcome {
            hits: hits.len() as u64,
            misses: misses.len() as u64,
            evicted,
            admitted,
            round,
        }
    }
}

/// One randomly generated single-partition scenario: a graph whose partition
/// 0 owns the locals and sees every other node as a halo, plus a random
/// sequence of sampled halo subsets.
pub struct RandomInstance {
    pub pg: PartitionedGraph,
    pub params: PolicyParams,
    pub steps: Vec<Vec<NodeId>>,
    pub feature_seed: u64,
}

impl RandomInstance {
    pub fn generate(rng: &mut ChaCha8Rng) -> RandomInstance {
        let n_local = rng.gen_range(4..12usize);
        let n_halo = rng.gen_range(2..10usize);
        let total = n_local + n_halo;
        let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
        // Local backbone keeps partition 0 connected.
        for i in 1..n_local {
            edges.push(((i - 1) as NodeId, i as NodeId));
        }
        // Every halo node touches at least one local so it lands in the halo
        // set; extra local links vary the in-partition degrees.
        for h in 0..n_halo {
            let halo = (n_local + h) as NodeId;
            let links = rng.gen_range(1..=n_local);
            let mut locals: Vec<NodeId> = (0..n_local as NodeId).collect();
            locals.shuffle(rng);
            for &l in locals.iter().take(links) {
                edges.push((halo, l));
            }
        }
        let graph = GlobalGraph::from_edges(total, &edges, false, 8).expect("instance graph");
        let ownership: HashMap<NodeId, PartitionId> = (0..total as NodeId)
            .map(|n| (n, if (n as usize) < n_local { 0 } else { 1 }))
            .collect();
        let pg = build_partitioned_graph(graph, &ownership, 2).expect("instance partitions");

        let params = PolicyParams {
            fraction: *[0.0, 0.2, 0.4, 0.6, 1.0].choose(rng).unwrap(),
            decay: rng.gen_range(0.5..=0.999),
            interval: rng.gen_range(1..=8),
            eviction: rng.gen_bool(0.9),
            clamp_swap_scores: rng.gen_bool(0.5),
        };

        let halos = pg.partitions[0].halo_nodes.clone();
        let n_steps = rng.gen_range(10..40usize);
        let steps = (0..n_steps)
            .map(|_| {
                let mut sampled: Vec<NodeId> =
                    halos.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
                sampled.sort_unstable();
                sampled
            })
            .collect();
        RandomInstance { pg, params, steps, feature_seed: rng.gen() }
    }

    /// Builds a block for step `s` sampling `halos` plus a couple of locals.
    pub fn block(&self, s: u64, halos: &[NodeId]) -> SampledBlock {
        let locals: Vec<NodeId> = self.pg.partitions[0]
            .local_nodes
            .iter()
            .copied()
            .take(2)
            .collect();
        let mut sampled: Vec<NodeId> = locals.iter().chain(halos).copied().collect();
        sampled.sort_unstable();
        SampledBlock {
            trainer: 0,
            step: s,
            seeds: vec![locals[0]],
            sampled_nodes: sampled,
            local_sampled: locals,
            halo_sampled: halos.to_vec(),
        }
    }

    pub fn init_engine(&self, backend: AccessBackend) -> (PrefetchState, FetchLedger) {
        let source = FeatureSource::new(&self.pg, self.feature_seed);
        let mut ledger = FetchLedger::default();
        let (state, _) = initialize_prefetcher(
            &self.pg.partitions[0],
            &self.pg.graph,
            0,
            self.params,
            backend,
            &source,
            &CostModel::default(),
            &mut ledger,
        )
        .expect("engine init");
        (state, ledger)
    }
}

/// Seeded generator stream for test reproducibility.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scale-free world built through the config layer.
pub fn ba_config(num_nodes: usize, partitions: usize, trainers_per_partition: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.graph.generate = Some(GeneratorSpec::BarabasiAlbert {
        num_nodes,
        attachment: 5,
        rng_seed: 1234,
    });
    cfg.partitioning.num_partitions = partitions;
    cfg.partitioning.method = halosim_core::config::PartitionMethod::GreedyBfs;
    cfg.trainers_per_partition = trainers_per_partition;
    cfg
}

pub fn build(cfg: &RunConfig) -> World {
    config::build_world(cfg).expect("world builds")
}

/// Two alternating partitions on a ring with chords: every neighbor of every
/// node lives on the other partition, so each sampled block touches halo
/// nodes and the baseline fetches from exactly one remote owner per step.
pub fn alternating_world(
    num_nodes: usize,
    cost: CostModel,
    policy: PolicyParams,
    epochs: u32,
    batch_size: usize,
) -> World {
    assert!(num_nodes % 2 == 0, "alternating ownership needs an even count");
    let n = num_nodes as NodeId;
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push((i, (i + 1) % n));
        edges.push((i, (i + 3) % n)); // odd chord keeps endpoints on opposite sides
    }
    let graph = GlobalGraph::from_edges(num_nodes, &edges, false, 16).expect("ring graph");
    let ownership: HashMap<NodeId, PartitionId> = (0..n).map(|i| (i, i % 2)).collect();
    let mut pg = build_partitioned_graph(graph, &ownership, 2).expect("ring partitions");
    select_train_nodes(&mut pg, 0.5, 5);
    let trainers = vec![
        TrainerSpec { id: 0, partition: 0, train_nodes: pg.partitions[0].train_nodes.clone() },
        TrainerSpec { id: 1, partition: 1, train_nodes: pg.partitions[1].train_nodes.clone() },
    ];
    World {
        pg: Arc::new(pg),
        trainers,
        fanouts: FanoutSpec::new(vec![2]).expect("fanouts"),
        batch_size,
        epochs,
        cost,
        policy,
        backend: AccessBackend::Dense,
        lookahead: 1,
        seed: 99,
        feature_seed: 4242,
        run_id: "alternating".into(),
    }
}

/// Every sampled halo node is served by the buffer or fetched; nothing else.
pub fn assert_fetch_identity(m: &RunMetrics) {
    for t in &m.trainers {
        assert_eq!(
            t.ledger.hit_copy_nodes + t.ledger.miss_fetch_nodes,
            t.ledger.baseline_equivalent_halo_nodes,
            "fetch identity violated for trainer {}",
            t.trainer
        );
    }
}
