//! Minibatch seed scheduling and layered neighborhood sampling.
//!
//! Sampling runs entirely over a partition's induced adjacency. Local
//! frontier nodes expand to min(fanout, degree) distinct uniform neighbors;
//! halo frontier nodes never expand (their adjacency lives on a remote
//! partition). Every random draw is keyed by (run seed, trainer, step) or
//! (run seed, epoch, trainer), so schedules that prepare minibatches ahead
//! of time sample exactly what a serial schedule would.

use rand::seq::SliceRandom;

use crate::graph::{GlobalGraph, NodeId, Partition};
use crate::rng;

/// Per-layer neighbor counts, outermost layer first (the hop nearest the
/// seeds uses the last entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FanoutSpec(Vec<usize>);

impl FanoutSpec {
    pub fn new(fanouts: Vec<usize>) -> Option<Self> {
        if fanouts.is_empty() || fanouts.contains(&0) {
            return None;
        }
        Some(Self(fanouts))
    }

    pub fn layers(&self) -> usize {
        self.0.len()
    }

    /// Fanout for hop `h` (1-based, counted outward from the seeds).
    pub fn for_hop(&self, hop: usize) -> usize {
        self.0[self.0.len() - hop]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// The union of nodes touched while sampling one minibatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledBlock {
    pub trainer: u32,
    pub step: u64,
    pub seeds: Vec<NodeId>,
    /// All distinct nodes in the block (seeds included), ascending.
    pub sampled_nodes: Vec<NodeId>,
    /// Partition-local subset of `sampled_nodes`, ascending.
    pub local_sampled: Vec<NodeId>,
    /// Halo subset of `sampled_nodes`, ascending.
    pub halo_sampled: Vec<NodeId>,
}

impl SampledBlock {
    pub fn num_nodes(&self) -> usize {
        self.sampled_nodes.len()
    }
}

/// Deterministic permutation of a trainer's seed nodes for one epoch.
pub fn epoch_order(train_nodes: &[NodeId], epoch: u64, trainer: u32, rng_seed: u64) -> Vec<NodeId> {
    let mut order = train_nodes.to_vec();
    let mut r = rng::stream(rng_seed, &[rng::tag::EPOCH_ORDER, epoch, u64::from(trainer)]);
    order.shuffle(&mut r);
    order
}

/// Batch `index` of an epoch order: consecutive slices of `batch_size`, the
/// final batch possibly smaller. `None` once the order is exhausted.
pub fn next_batch(order: &[NodeId], batch_size: usize, index: usize) -> Option<&[NodeId]> {
    if batch_size == 0 {
        return None;
    }
    let start = index.checked_mul(batch_size)?;
    if start >= order.len() {
        return None;
    }
    Some(&order[start..(start + batch_size).min(order.len())])
}

/// Batches in one epoch for a seed list.
pub fn batches_per_epoch(num_train: usize, batch_size: usize) -> usize {
    num_train.div_ceil(batch_size)
}

/// Samples one layered block from `seeds` over the partition's induced
/// adjacency. Deterministic in (rng_seed, trainer, step).
pub fn sample_block(
    partition: &Partition,
    graph: &GlobalGraph,
    seeds: &[NodeId],
    fanouts: &FanoutSpec,
    rng_seed: u64,
    trainer: u32,
    step: u64,
) -> SampledBlock {
    debug_assert!(seeds.iter().all(|&s| partition.is_local(s)), "seeds must be local");
    let mut r = rng::stream(rng_seed, &[rng::tag::SAMPLE, u64::from(trainer), step]);

    let mut sampled: std::collections::BTreeSet<NodeId> = seeds.iter().copied().collect();
    let mut frontier: Vec<NodeId> = sampled.iter().copied().collect();
    let mut scratch: Vec<usize> = Vec::new();
    for hop in 1..=fanouts.layers() {
        let fanout = fanouts.for_hop(hop);
        let mut next: std::collections::BTreeSet<NodeId> = std::collections::BTreeSet::new();
        for &v in &frontier {
            if !partition.is_local(v) {
                continue; // halo adjacency is remote
            }
            let nbrs = graph.neighbors_of(v);
            if nbrs.is_empty() {
                continue;
            }
            if nbrs.len() <= fanout {
                next.extend(nbrs.iter().copied());
            } else {
                // Distinct uniform picks via a partial shuffle of indices.
                scratch.clear();
                scratch.extend(0..nbrs.len());
                let (picked, _) = scratch.partial_shuffle(&mut r, fanout);
                next.extend(picked.iter().map(|&i| nbrs[i]));
            }
        }
        frontier = next.iter().copied().collect();
        sampled.extend(next);
    }

    let sampled_nodes: Vec<NodeId> = sampled.into_iter().collect();
    let (local_sampled, halo_sampled): (Vec<NodeId>, Vec<NodeId>) =
        sampled_nodes.iter().partition(|&&n| partition.is_local(n));
    debug_assert!(halo_sampled.iter().all(|&n| partition.is_halo(n)));
    SampledBlock {
        trainer,
        step,
        seeds: seeds.to_vec(),
        sampled_nodes,
        local_sampled,
        halo_sampled,
    }
}
