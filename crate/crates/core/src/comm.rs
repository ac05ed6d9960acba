//! Simulated feature transport: remote fetches, local copies, and the cost
//! model that prices them.
//!
//! All durations are integer nanoseconds. Each cost term is computed in f64
//! seconds and rounded once; schedule arithmetic downstream is exact integer
//! math. A remote fetch issues one batched request per owning partition:
//! `latency + nodes * bytes / bandwidth` each, summed over partitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FeatureVector, NodeId, PartitionId, PartitionedGraph};

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("partition {partition} asked to remote-fetch node {node} it already owns")]
    LocalNodeRequested { partition: PartitionId, node: NodeId },
    #[error("cost model rejected: {0}")]
    BadCostModel(String),
}

/// Prices for every simulated operation, in seconds and bytes/second.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Fixed overhead per remote request batch.
    pub rpc_latency_s: f64,
    /// Wire bandwidth for remote feature payloads.
    pub rpc_bandwidth_bytes_per_s: f64,
    /// Memory bandwidth for local/buffered feature copies.
    pub copy_bandwidth_bytes_per_s: f64,
    /// Buffer membership probe per sampled halo node; also prices the
    /// scoreboard scan on eviction rounds.
    pub lookup_cost_per_node_s: f64,
    /// One scoreboard write (decay, miss increment, or swap half).
    pub scoring_cost_per_node_s: f64,
    /// Neighborhood sampling, per node in the block.
    pub sample_cost_per_node_s: f64,
    /// Fixed compute + gradient sync cost per minibatch step.
    pub train_cost_fixed_s: f64,
    /// Additional training cost per node in the block.
    pub train_cost_per_node_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // Desk-scale defaults: RPC dominates copies, training dominates both.
        Self {
            rpc_latency_s: 300e-6,
            rpc_bandwidth_bytes_per_s: 1.25e9,
            copy_bandwidth_bytes_per_s: 12.5e9,
            lookup_cost_per_node_s: 20e-9,
            scoring_cost_per_node_s: 15e-9,
            sample_cost_per_node_s: 120e-9,
            train_cost_fixed_s: 2e-3,
            train_cost_per_node_s: 250e-9,
        }
    }
}

/// Converts seconds to the integer-nanosecond clock.
pub fn secs_to_ns(s: f64) -> u64 {
    debug_assert!(s >= 0.0 && s.is_finite());
    (s * 1e9).round() as u64
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CommError> {
        let nonneg = [
            ("rpc_latency_s", self.rpc_latency_s),
            ("lookup_cost_per_node_s", self.lookup_cost_per_node_s),
            ("scoring_cost_per_node_s", self.scoring_cost_per_node_s),
            ("sample_cost_per_node_s", self.sample_cost_per_node_s),
            ("train_cost_fixed_s", self.train_cost_fixed_s),
            ("train_cost_per_node_s", self.train_cost_per_node_s),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(CommError::BadCostModel(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, v) in [
            ("rpc_bandwidth_bytes_per_s", self.rpc_bandwidth_bytes_per_s),
            ("copy_bandwidth_bytes_per_s", self.copy_bandwidth_bytes_per_s),
        ] {
            // NaN and zero both fail; +inf passes (infinite bandwidth, zero cost).
            if v.is_nan() || v <= 0.0 {
                return Err(CommError::BadCostModel(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// Cost of one remote batch of `nodes` feature rows.
    pub fn rpc_batch_ns(&self, nodes: usize, bytes_per_node: usize) -> u64 {
        secs_to_ns(
            self.rpc_latency_s
                + (nodes as f64 * bytes_per_node as f64) / self.rpc_bandwidth_bytes_per_s,
        )
    }

    /// Cost of copying `nodes` feature rows through local memory.
    pub fn copy_ns(&self, nodes: usize, bytes_per_node: usize) -> u64 {
        secs_to_ns((nodes as f64 * bytes_per_node as f64) / self.copy_bandwidth_bytes_per_s)
    }

    pub fn lookup_ns(&self, probes: usize) -> u64 {
        secs_to_ns(self.lookup_cost_per_node_s * probes as f64)
    }

    pub fn scoring_ns(&self, updates: usize) -> u64 {
        secs_to_ns(self.scoring_cost_per_node_s * updates as f64)
    }

    pub fn sampling_ns(&self, block_nodes: usize) -> u64 {
        secs_to_ns(self.sample_cost_per_node_s * block_nodes as f64)
    }

    pub fn train_ns(&self, block_nodes: usize) -> u64 {
        secs_to_ns(self.train_cost_fixed_s + self.train_cost_per_node_s * block_nodes as f64)
    }
}

/// Why a fetch happened; selects the ledger counter it lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchKind {
    /// Buffer fill at initialization.
    Init,
    /// Sampled halo nodes absent from the buffer.
    Miss,
    /// Features for nodes admitted by an eviction round.
    Replacement,
    /// Baseline mode: every sampled halo node.
    Baseline,
}

/// Per-trainer fetch accounting. Counters are node counts except
/// `rpc_requests`, which counts per-partition batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchLedger {
    /// Sampled halo nodes per step (hits + misses): what baseline would fetch.
    pub baseline_equivalent_halo_nodes: u64,
    /// Halo features served from the buffer.
    pub hit_copy_nodes: u64,
    /// Halo features fetched remotely because they missed.
    pub miss_fetch_nodes: u64,
    /// Features fetched for admitted replacements (excluding nodes already
    /// fetched as misses in the same batch).
    pub replacement_fetch_nodes: u64,
    /// Features fetched to fill the buffer at initialization.
    pub init_fetch_nodes: u64,
    /// Remote request batches issued.
    pub rpc_requests: u64,
}

impl FetchLedger {
    pub fn merge(&mut self, other: &FetchLedger) {
        self.baseline_equivalent_halo_nodes += other.baseline_equivalent_halo_nodes;
        self.hit_copy_nodes += other.hit_copy_nodes;
        self.miss_fetch_nodes += other.miss_fetch_nodes;
        self.replacement_fetch_nodes += other.replacement_fetch_nodes;
        self.init_fetch_nodes += other.init_fetch_nodes;
        self.rpc_requests += other.rpc_requests;
    }

    /// Remote fetch volume that the buffer is trying to save.
    pub fn steady_state_fetch_nodes(&self) -> u64 {
        self.miss_fetch_nodes + self.replacement_fetch_nodes
    }
}

/// Serves node features by owner. Features come from the deterministic
/// synthesizer, so any fetched payload can be checked against the oracle.
pub struct FeatureSource<'a> {
    pub pg: &'a PartitionedGraph,
    pub feature_seed: u64,
}

impl<'a> FeatureSource<'a> {
    pub fn new(pg: &'a PartitionedGraph, feature_seed: u64) -> Self {
        Self { pg, feature_seed }
    }

    pub fn feature(&self, n: NodeId) -> FeatureVector {
        crate::graph::node_feature(n, self.feature_seed, self.pg.graph.feature_dim())
    }

    pub fn bytes_per_node(&self) -> usize {
        self.pg.graph.feature_bytes_per_node()
    }
}

/// Result of one simulated remote fetch.
#[derive(Debug, Clone)]
pub struct RemoteFetch {
    /// (node, feature) pairs, ascending by node id.
    pub features: Vec<(NodeId, FeatureVector)>,
    pub rpc_ns: u64,
    pub requests: u64,
}

fn batch_and_price(
    source: &FeatureSource,
    requester: PartitionId,
    nodes: &[NodeId],
    cost: &CostModel,
) -> Result<RemoteFetch, CommError> {
    debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]), "nodes must be sorted unique");
    let mut by_owner: BTreeMap<PartitionId, Vec<NodeId>> = BTreeMap::new();
    for &n in nodes {
        let owner = source.pg.owner(n);
        if owner == requester {
            return Err(CommError::LocalNodeRequested { partition: requester, node: n });
        }
        by_owner.entry(owner).or_default().push(n);
    }
    let bytes = source.bytes_per_node();
    let mut rpc_ns = 0u64;
    let mut features = Vec::with_capacity(nodes.len());
    let requests = by_owner.len() as u64;
    for (_owner, batch) in by_owner {
        rpc_ns += cost.rpc_batch_ns(batch.len(), bytes);
        for n in batch {
            features.push((n, source.feature(n)));
        }
    }
    features.sort_unstable_by_key(|(n, _)| *n);
    Ok(RemoteFetch { features, rpc_ns, requests })
}

/// Fetches `nodes` from their owning partitions on behalf of `requester`.
/// One batched request per remote owner; requesting a locally-owned node is
/// a simulator fault. `nodes` must be sorted and duplicate-free.
pub fn fetch_remote(
    source: &FeatureSource,
    requester: PartitionId,
    nodes: &[NodeId],
    cost: &CostModel,
    kind: FetchKind,
    ledger: &mut FetchLedger,
) -> Result<RemoteFetch, CommError> {
    let fetch = batch_and_price(source, requester, nodes, cost)?;
    match kind {
        FetchKind::Init => ledger.init_fetch_nodes += nodes.len() as u64,
        FetchKind::Miss => ledger.miss_fetch_nodes += nodes.len() as u64,
        FetchKind::Replacement => ledger.replacement_fetch_nodes += nodes.len() as u64,
        FetchKind::Baseline => ledger.miss_fetch_nodes += nodes.len() as u64,
    }
    ledger.rpc_requests += fetch.requests;
    Ok(fetch)
}

/// Eviction-step fetch: misses and replacement features travel in the same
/// per-owner batches. A node appearing in both lists is fetched once and
/// counted as a miss, so ledger node counts equal wire traffic exactly.
pub fn fetch_remote_combined(
    source: &FeatureSource,
    requester: PartitionId,
    misses: &[NodeId],
    replacements: &[NodeId],
    cost: &CostModel,
    ledger: &mut FetchLedger,
) -> Result<RemoteFetch, CommError> {
    let mut union: Vec<NodeId> = misses.iter().chain(replacements).copied().collect();
    union.sort_unstable();
    union.dedup();
    let fetch = batch_and_price(source, requester, &union, cost)?;
    ledger.miss_fetch_nodes += misses.len() as u64;
    ledger.replacement_fetch_nodes += (union.len() - misses.len()) as u64;
    ledger.rpc_requests += fetch.requests;
    Ok(fetch)
}

/// Portion of a transfer phase not hidden behind local copying.
pub fn communication_stall_ns(rpc_ns: u64, copy_ns: u64) -> u64 {
    rpc_ns.saturating_sub(copy_ns)
}
