//! Per-trainer feature buffer with score-driven eviction.
//!
//! Two scoreboards drive the policy:
//!
//!   * eviction score `S_E`: one entry per buffered node. Starts at 1, is
//!     multiplied by the decay factor every step the node goes unsampled,
//!     and is left untouched on a hit.
//!   * access score `S_A`: one entry per halo node. Exactly -1 while the
//!     node is buffered (a sentinel, never read as a magnitude), otherwise
//!     >= 0 and incremented once per miss.
//!
//! Every `interval` steps an eviction round runs: buffered nodes whose
//! eviction score fell strictly below the threshold `decay^interval` are
//! paired with the best-scoring outside nodes (access score >= 1) and the
//! two swap scoreboard places. An evicted node keeps its old eviction score
//! as its access score, so recently useful nodes re-enter quickly; an
//! admitted node's access score becomes its starting eviction score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{
    fetch_remote, fetch_remote_combined, CommError, CostModel, FeatureSource, FetchKind,
    FetchLedger,
};
use crate::graph::{FeatureVector, GlobalGraph, NodeId, Partition, PartitionId};
use crate::sampler::SampledBlock;

#[derive(Debug, Error, PartialEq)]
pub enum PrefetchError {
    #[error("invalid policy: {0}")]
    BadPolicy(String),
}

/// Buffer sizing and eviction policy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    /// Fraction of the partition's halo nodes the buffer holds, in [0, 1].
    pub fraction: f64,
    /// Per-step multiplicative decay of unused eviction scores, in (0, 1].
    pub decay: f64,
    /// Steps between eviction rounds, >= 1.
    pub interval: u64,
    /// When false the buffer contents are frozen after initialization.
    pub eviction: bool,
    /// Clamp scores inherited from the access scoreboard to at most 1 when
    /// admitting a node (off by default: inherited scores may exceed 1).
    pub clamp_swap_scores: bool,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            fraction: 0.25,
            decay: 0.995,
            interval: 64,
            eviction: true,
            clamp_swap_scores: false,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PrefetchError> {
        if !(0.0..=1.0).contains(&self.fraction) || self.fraction.is_nan() {
            return Err(PrefetchError::BadPolicy(format!(
                "fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(PrefetchError::BadPolicy(format!(
                "decay {} outside (0, 1]",
                self.decay
            )));
        }
        if self.interval == 0 {
            return Err(PrefetchError::BadPolicy("interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Eviction threshold: the score a fresh entry decays to after exactly
    /// `interval` unused steps. Eviction requires falling strictly below.
    pub fn threshold(&self) -> f64 {
        self.decay.powf(self.interval as f64)
    }
}

/// Storage strategy for the access scoreboard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessBackend {
    /// One slot per global node id; O(1) lookups, O(|V|) memory.
    Dense,
    /// Sorted halo-id array with a parallel score array; binary-search
    /// lookups, O(|halo|) memory.
    Compact,
}

/// Access scores for a partition's halo nodes. Both backends observe the
/// same sequence of reads and writes and produce identical values.
#[derive(Debug, Clone)]
enum AccessScores {
    Dense { scores: Vec<f64> },
    Compact { halo_ids: Vec<NodeId>, scores: Vec<f64> },
}

impl AccessScores {
    fn new(backend: AccessBackend, num_nodes: usize, halo_nodes: &[NodeId]) -> Self {
        match backend {
            AccessBackend::Dense => AccessScores::Dense {
                scores: vec![0.0; num_nodes],
            },
            AccessBackend::Compact => AccessScores::Compact {
                halo_ids: halo_nodes.to_vec(),
                scores: vec![0.0; halo_nodes.len()],
            },
        }
    }

    fn get(&self, n: NodeId) -> f64 {
        match self {
            AccessScores::Dense { scores } => scores[n as usize],
            AccessScores::Compact { halo_ids, scores } => {
                let i = halo_ids.binary_search(&n).expect("node is not a halo node");
                scores[i]
            }
        }
    }

    fn set(&mut self, n: NodeId, v: f64) {
        match self {
            AccessScores::Dense { scores } => scores[n as usize] = v,
            AccessScores::Compact { halo_ids, scores } => {
                let i = halo_ids.binary_search(&n).expect("node is not a halo node");
                scores[i] = v;
            }
        }
    }

    fn add(&mut self, n: NodeId, v: f64) {
        let cur = self.get(n);
        self.set(n, cur + v);
    }
}

/// Result of one eviction round. `evicted[i]` left the buffer to make room
/// for `replacements[i]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvictReplaceOutcome {
    pub evicted: Vec<NodeId>,
    pub replacements: Vec<NodeId>,
}

impl EvictReplaceOutcome {
    pub fn swaps(&self) -> usize {
        debug_assert_eq!(self.evicted.len(), self.replacements.len());
        self.evicted.len()
    }
}

/// Hit/miss split of one block's sampled halo nodes. Hit features are
/// captured here, before any eviction round can remove them.
#[derive(Debug, Clone)]
pub struct Classified {
    pub hits: Vec<NodeId>,
    pub misses: Vec<NodeId>,
    hit_features: Vec<(NodeId, FeatureVector)>,
}

/// Feature payload handed to the training step.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchPayload {
    pub step: u64,
    /// (node, feature) for every sampled node, ascending by id.
    pub features: Vec<(NodeId, FeatureVector)>,
}

/// Everything the pipeline needs to account for one prepared minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStep {
    pub payload: MinibatchPayload,
    pub hits: u64,
    pub misses: u64,
    pub evicted: u64,
    pub replaced: u64,
    pub eviction_round: bool,
    pub lookup_ns: u64,
    /// Portion of `lookup_ns` spent scanning scoreboards on eviction rounds.
    pub eviction_lookup_ns: u64,
    pub scoring_ns: u64,
    pub rpc_ns: u64,
    pub copy_ns: u64,
}

/// Per-trainer prefetch buffer plus both scoreboards.
#[derive(Debug, Clone)]
pub struct PrefetchState {
    pub trainer: u32,
    pub partition_id: PartitionId,
    params: PolicyParams,
    alpha: f64,
    capacity: usize,
    entries: HashMap<NodeId, FeatureVector>,
    evict_scores: HashMap<NodeId, f64>,
    access: AccessScores,
    /// Minibatches prepared so far (1-based after each step); drives the
    /// eviction-round schedule.
    prepared: u64,
}

/// Builds a trainer's buffer: the top `ceil(fraction * |halo|)` halo nodes by
/// in-partition degree (ties to the lower id), features fetched in one
/// initialization pass.
#[allow(clippy::too_many_arguments)]
pub fn initialize_prefetcher(
    partition: &Partition,
    graph: &GlobalGraph,
    trainer: u32,
    params: PolicyParams,
    backend: AccessBackend,
    source: &FeatureSource,
    cost: &CostModel,
    ledger: &mut FetchLedger,
) -> Result<(PrefetchState, u64), CommError> {
    let capacity = (params.fraction * partition.halo_nodes.len() as f64).ceil() as usize;
    let mut ranked: Vec<NodeId> = partition.halo_nodes.clone();
    ranked.sort_by(|&a, &b| {
        partition
            .in_partition_degree(b, graph)
            .cmp(&partition.in_partition_degree(a, graph))
            .then(a.cmp(&b))
    });
    ranked.truncate(capacity);
    ranked.sort_unstable();

    let fetch = fetch_remote(source, partition.id, &ranked, cost, FetchKind::Init, ledger)?;
    let mut access = AccessScores::new(backend, graph.num_nodes(), &partition.halo_nodes);
    let mut evict_scores = HashMap::with_capacity(capacity);
    let mut entries = HashMap::with_capacity(capacity);
    for (n, feat) in fetch.features {
        entries.insert(n, feat);
        evict_scores.insert(n, 1.0);
        access.set(n, -1.0);
    }
    Ok((
        PrefetchState {
            trainer,
            partition_id: partition.id,
            params,
            alpha: params.threshold(),
            capacity,
            entries,
            evict_scores,
            access,
            prepared: 0,
        },
        fetch.rpc_ns,
    ))
}

impl PrefetchState {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.entries.contains_key(&n)
    }

    /// Buffered node ids, ascending.
    pub fn buffered_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.entries.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Eviction score of a buffered node.
    pub fn evict_score(&self, n: NodeId) -> Option<f64> {
        self.evict_scores.get(&n).copied()
    }

    /// Access score of a halo node (-1 while buffered).
    pub fn access_score(&self, n: NodeId) -> f64 {
        self.access.get(n)
    }

    /// Splits a block's sampled halo nodes into buffer hits and misses and
    /// snapshots the hit features.
    pub fn classify(&self, block: &SampledBlock) -> Classified {
        let mut hits = Vec::new();
        let mut misses = Vec::new();
        let mut hit_features = Vec::new();
        for &n in &block.halo_sampled {
            match self.entries.get(&n) {
                Some(feat) => {
                    hits.push(n);
                    hit_features.push((n, feat.clone()));
                }
                None => misses.push(n),
            }
        }
        Classified { hits, misses, hit_features }
    }

    /// Decays every buffered node that was not sampled this step. Returns
    /// the number of scores touched.
    pub fn apply_decay(&mut self, hits: &[NodeId]) -> usize {
        // `hits` is exactly the buffered subset of this step's sampled halo
        // nodes, so "buffered and unsampled" is "buffered and not hit".
        let hit_set: std::collections::HashSet<NodeId> = hits.iter().copied().collect();
        let mut touched = 0;
        for (n, score) in self.evict_scores.iter_mut() {
            if !hit_set.contains(n) {
                *score *= self.params.decay;
                touched += 1;
            }
        }
        touched
    }

    /// Counts one miss against each node's access score.
    pub fn record_misses(&mut self, misses: &[NodeId]) {
        for &n in misses {
            debug_assert!(!self.entries.contains_key(&n), "miss cannot be buffered");
            self.access.add(n, 1.0);
        }
    }

    /// Whether the next prepared step is an eviction round; step counting is
    /// 1-based, so the first round lands after `interval` whole steps.
    fn is_eviction_round(&self, step_count: u64) -> bool {
        self.params.eviction && self.capacity > 0 && step_count % self.params.interval == 0
    }

    /// One eviction round. Eviction candidates are buffered nodes with score
    /// strictly below the threshold, worst first; replacement candidates are
    /// outside halo nodes with access score >= 1, ranked by access score,
    /// then in-partition degree, then lower id. Only as many evictions
    /// happen as replacements exist, and each pair swaps scoreboard places.
    /// Admitted features are installed immediately (buffer size is conserved
    /// across the round); the wire cost of moving them is priced by
    /// `assemble_minibatch`, which shares their transfer with the miss fetch.
    pub fn evict_and_replace(
        &mut self,
        partition: &Partition,
        graph: &GlobalGraph,
        source: &FeatureSource,
    ) -> EvictReplaceOutcome {
        let mut candidates: Vec<(NodeId, f64)> = self
            .evict_scores
            .iter()
            .filter(|(_, &s)| s < self.alpha)
            .map(|(&n, &s)| (n, s))
            .collect();
        if candidates.is_empty() {
            return EvictReplaceOutcome::default();
        }
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let mut replacements: Vec<(NodeId, f64)> = partition
            .halo_nodes
            .iter()
            .filter(|n| !self.entries.contains_key(n))
            .map(|&n| (n, self.access.get(n)))
            .filter(|&(_, s)| s >= 1.0)
            .collect();
        replacements.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| {
                    partition
                        .in_partition_degree(b.0, graph)
                        .cmp(&partition.in_partition_degree(a.0, graph))
                })
                .then(a.0.cmp(&b.0))
        });

        let k = candidates.len().min(replacements.len());
        let mut outcome = EvictReplaceOutcome::default();
        for i in 0..k {
            let (evicted, old_se) = candidates[i];
            let (admitted, old_sa) = replacements[i];
            self.evict_scores.remove(&evicted);
            self.entries.remove(&evicted);
            self.access.set(evicted, old_se);
            let inherited = if self.params.clamp_swap_scores {
                old_sa.min(1.0)
            } else {
                old_sa
            };
            self.evict_scores.insert(admitted, inherited);
            self.access.set(admitted, -1.0);
            self.entries.insert(admitted, source.feature(admitted));
            outcome.evicted.push(evicted);
            outcome.replacements.push(admitted);
        }
        debug_assert_eq!(self.entries.len(), self.evict_scores.len());
        outcome
    }

    /// Fetches everything the payload and the buffer need and prices the
    /// transfer. Local and buffered features move at copy bandwidth; misses
    /// (plus replacement features, in the same batches) move over RPC.
    pub fn assemble_minibatch(
        &mut self,
        block: &SampledBlock,
        classified: &Classified,
        outcome: &EvictReplaceOutcome,
        source: &FeatureSource,
        cost: &CostModel,
        ledger: &mut FetchLedger,
    ) -> Result<(MinibatchPayload, u64, u64), CommError> {
        ledger.baseline_equivalent_halo_nodes +=
            (classified.hits.len() + classified.misses.len()) as u64;
        ledger.hit_copy_nodes += classified.hits.len() as u64;

        let fetch = if outcome.swaps() == 0 {
            fetch_remote(
                source,
                self.partition_id,
                &classified.misses,
                cost,
                FetchKind::Miss,
                ledger,
            )?
        } else {
            let mut repl = outcome.replacements.clone();
            repl.sort_unstable();
            fetch_remote_combined(
                source,
                self.partition_id,
                &classified.misses,
                &repl,
                cost,
                ledger,
            )?
        };

        let miss_set: std::collections::HashSet<NodeId> =
            classified.misses.iter().copied().collect();
        let mut features: Vec<(NodeId, FeatureVector)> = Vec::with_capacity(block.num_nodes());
        for &n in &block.local_sampled {
            features.push((n, source.feature(n)));
        }
        features.extend(classified.hit_features.iter().cloned());
        features.extend(
            fetch
                .features
                .into_iter()
                .filter(|(n, _)| miss_set.contains(n)),
        );
        features.sort_unstable_by_key(|(n, _)| *n);
        debug_assert_eq!(features.len(), block.num_nodes());

        let copy_ns = cost.copy_ns(
            block.local_sampled.len() + classified.hits.len(),
            source.bytes_per_node(),
        );
        Ok((
            MinibatchPayload { step: block.step, features },
            fetch.rpc_ns,
            copy_ns,
        ))
    }

    /// Full preparation of one sampled block: classify, decay, record
    /// misses, run an eviction round when due, fetch, and assemble.
    pub fn prepare_step(
        &mut self,
        block: &SampledBlock,
        partition: &Partition,
        source: &FeatureSource,
        cost: &CostModel,
        ledger: &mut FetchLedger,
    ) -> Result<PreparedStep, CommError> {
        self.prepared += 1;
        let classified = self.classify(block);
        let decayed = self.apply_decay(&classified.hits);
        self.record_misses(&classified.misses);

        let eviction_round = self.is_eviction_round(self.prepared);
        let outcome = if eviction_round {
            self.evict_and_replace(partition, &source.pg.graph, source)
        } else {
            EvictReplaceOutcome::default()
        };

        let (payload, rpc_ns, copy_ns) =
            self.assemble_minibatch(block, &classified, &outcome, source, cost, ledger)?;

        // Membership probes for every sampled halo node; eviction rounds
        // additionally scan both scoreboards across the whole halo set.
        let eviction_lookup_ns = if eviction_round {
            cost.lookup_ns(partition.halo_nodes.len())
        } else {
            0
        };
        let lookup_ns = cost.lookup_ns(block.halo_sampled.len()) + eviction_lookup_ns;
        // One write per decayed score, per recorded miss, and two per swap.
        let scoring_updates = decayed + classified.misses.len() + 2 * outcome.swaps();
        let scoring_ns = cost.scoring_ns(scoring_updates);

        Ok(PreparedStep {
            payload,
            hits: classified.hits.len() as u64,
            misses: classified.misses.len() as u64,
            evicted: outcome.evicted.len() as u64,
            replaced: outcome.replacements.len() as u64,
            eviction_round,
            lookup_ns,
            eviction_lookup_ns,
            scoring_ns,
            rpc_ns,
            copy_ns,
        })
    }
}
