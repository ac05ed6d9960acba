//! Global graph, partitions, and deterministic node features.
//!
//! The global graph is a CSR adjacency over dense node ids. A partition owns
//! a set of local nodes; every non-local node adjacent to a local node is a
//! halo node of that partition. A partition only knows about edges with at
//! least one local endpoint (halo-to-halo edges live on other partitions), so
//! a local node's in-partition degree equals its global degree while a halo
//! node's in-partition degree counts only its edges into the local set.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub type NodeId = u32;
pub type PartitionId = u32;

/// Bytes per feature element; features are f32.
pub const FEATURE_ELEMENT_BYTES: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {0} has no ownership entry")]
    MissingOwnership(NodeId),
    #[error("node {node} assigned to partition {partition} but only {num_partitions} partitions exist")]
    PartitionOutOfRange {
        node: NodeId,
        partition: PartitionId,
        num_partitions: usize,
    },
    #[error("node id {0} out of range for graph with {1} nodes")]
    NodeOutOfRange(NodeId, usize),
    #[error("trainers_per_partition must be at least 1")]
    ZeroTrainers,
    #[error("num_partitions must be at least 1")]
    ZeroPartitions,
}

/// Dense per-node feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Reference feature synthesizer: `values[k] = hash(seed, id, k)` mapped to
/// [0, 1). Pure integer mixing, so payload equality checks can compare bits.
pub fn node_feature(id: NodeId, feature_seed: u64, feature_dim: usize) -> FeatureVector {
    let base = rng::mix_key(feature_seed, &[u64::from(id)]);
    let values = (0..feature_dim)
        .map(|k| {
            let h = rng::splitmix64(base ^ (k as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
            // Top 24 bits: exactly representable in an f32 mantissa.
            (h >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect();
    FeatureVector(values)
}

/// Immutable global graph with CSR adjacency.
#[derive(Debug, Clone)]
pub struct GlobalGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    feature_dim: usize,
    directed: bool,
}

impl GlobalGraph {
    /// Builds a graph from an edge list. Duplicate edges collapse to one;
    /// for undirected graphs `(u, v)` and `(v, u)` are the same edge and the
    /// adjacency is symmetrized. Self loops contribute a single neighbor
    /// entry. Node ids must be < `num_nodes`.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(NodeId, NodeId)],
        directed: bool,
        feature_dim: usize,
    ) -> Result<Self, GraphError> {
        let mut dedup: HashSet<(NodeId, NodeId)> = HashSet::with_capacity(edges.len());
        for &(u, v) in edges {
            if u as usize >= num_nodes {
                return Err(GraphError::NodeOutOfRange(u, num_nodes));
            }
            if v as usize >= num_nodes {
                return Err(GraphError::NodeOutOfRange(v, num_nodes));
            }
            let key = if directed || u <= v { (u, v) } else { (v, u) };
            dedup.insert(key);
        }

        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &dedup {
            degree[u as usize] += 1;
            if !directed && u != v {
                degree[v as usize] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0usize);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut neighbors = vec![0 as NodeId; *offsets.last().unwrap()];
        let mut cursor = offsets[..num_nodes].to_vec();
        for &(u, v) in &dedup {
            neighbors[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            if !directed && u != v {
                neighbors[cursor[v as usize]] = u;
                cursor[v as usize] += 1;
            }
        }
        // Sorted neighbor lists make sampling and tests order-independent of
        // the input edge order.
        for n in 0..num_nodes {
            neighbors[offsets[n]..offsets[n + 1]].sort_unstable();
        }
        Ok(Self {
            num_nodes,
            offsets,
            neighbors,
            feature_dim,
            directed,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        if self.directed {
            self.neighbors.len()
        } else {
            // Self loops appear once in the CSR, other edges twice.
            let self_loops = (0..self.num_nodes as NodeId)
                .filter(|&n| self.neighbors_of(n).binary_search(&n).is_ok())
                .count();
            (self.neighbors.len() - self_loops) / 2 + self_loops
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn feature_bytes_per_node(&self) -> usize {
        self.feature_dim * FEATURE_ELEMENT_BYTES
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.offsets[n as usize + 1] - self.offsets[n as usize]
    }

    pub fn neighbors_of(&self, n: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[n as usize]..self.offsets[n as usize + 1]]
    }

    /// Edge list in canonical order (each undirected edge once, u <= v).
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for u in 0..self.num_nodes as NodeId {
            for &v in self.neighbors_of(u) {
                if self.directed || u <= v {
                    out.push((u, v));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// One partition's view of the graph.
#[derive(Debug, Clone)]
pub struct Partition {
    pub id: PartitionId,
    /// Nodes owned by this partition, ascending.
    pub local_nodes: Vec<NodeId>,
    /// Non-local nodes adjacent to a local node, ascending.
    pub halo_nodes: Vec<NodeId>,
    /// Local nodes used as minibatch seeds, ascending.
    pub train_nodes: Vec<NodeId>,
    local_set: HashSet<NodeId>,
    halo_set: HashSet<NodeId>,
    /// In-partition degree of each halo node: edges into the local set.
    halo_degree: HashMap<NodeId, u32>,
}

impl Partition {
    pub fn is_local(&self, n: NodeId) -> bool {
        self.local_set.contains(&n)
    }

    pub fn is_halo(&self, n: NodeId) -> bool {
        self.halo_set.contains(&n)
    }

    /// Degree of `n` in the partition-induced edge set (edges with at least
    /// one local endpoint). Zero for nodes the partition has never seen.
    pub fn in_partition_degree(&self, n: NodeId, graph: &GlobalGraph) -> u32 {
        if self.is_local(n) {
            graph.degree(n) as u32
        } else {
            self.halo_degree.get(&n).copied().unwrap_or(0)
        }
    }
}

/// Global graph plus a complete ownership assignment and per-partition views.
#[derive(Debug, Clone)]
pub struct PartitionedGraph {
    pub graph: GlobalGraph,
    pub partitions: Vec<Partition>,
    ownership: Vec<PartitionId>,
}

impl PartitionedGraph {
    pub fn owner(&self, n: NodeId) -> PartitionId {
        self.ownership[n as usize]
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }
}

/// Splits the graph into per-partition views from an ownership map. Every
/// node must have an in-range entry.
pub fn build_partitioned_graph(
    graph: GlobalGraph,
    ownership: &HashMap<NodeId, PartitionId>,
    num_partitions: usize,
) -> Result<PartitionedGraph, GraphError> {
    if num_partitions == 0 {
        return Err(GraphError::ZeroPartitions);
    }
    let mut owner_vec = vec![0 as PartitionId; graph.num_nodes()];
    for n in 0..graph.num_nodes() as NodeId {
        let p = *ownership
            .get(&n)
            .ok_or(GraphError::MissingOwnership(n))?;
        if p as usize >= num_partitions {
            return Err(GraphError::PartitionOutOfRange {
                node: n,
                partition: p,
                num_partitions,
            });
        }
        owner_vec[n as usize] = p;
    }

    let mut partitions = Vec::with_capacity(num_partitions);
    for pid in 0..num_partitions as PartitionId {
        let local_nodes: Vec<NodeId> = (0..graph.num_nodes() as NodeId)
            .filter(|&n| owner_vec[n as usize] == pid)
            .collect();
        let local_set: HashSet<NodeId> = local_nodes.iter().copied().collect();
        let mut halo_degree: HashMap<NodeId, u32> = HashMap::new();
        for &u in &local_nodes {
            for &v in graph.neighbors_of(u) {
                if owner_vec[v as usize] != pid {
                    *halo_degree.entry(v).or_insert(0) += 1;
                }
            }
        }
        let mut halo_nodes: Vec<NodeId> = halo_degree.keys().copied().collect();
        halo_nodes.sort_unstable();
        let halo_set: HashSet<NodeId> = halo_nodes.iter().copied().collect();
        partitions.push(Partition {
            id: pid,
            local_nodes,
            halo_nodes,
            train_nodes: Vec::new(),
            local_set,
            halo_set,
            halo_degree,
        });
    }
    Ok(PartitionedGraph {
        graph,
        partitions,
        ownership: owner_vec,
    })
}

/// Marks a deterministic fraction of each partition's local nodes as training
/// seeds: seeded shuffle, take ceil(fraction * |local|), sort ascending.
pub fn select_train_nodes(pg: &mut PartitionedGraph, fraction: f64, seed: u64) {
    use rand::seq::SliceRandom;
    let fraction = fraction.clamp(0.0, 1.0);
    for part in &mut pg.partitions {
        let take = (fraction * part.local_nodes.len() as f64).ceil() as usize;
        let mut shuffled = part.local_nodes.clone();
        let mut r = rng::stream(seed, &[rng::tag::TRAIN_SPLIT, u64::from(part.id)]);
        shuffled.shuffle(&mut r);
        let mut train: Vec<NodeId> = shuffled.into_iter().take(take).collect();
        train.sort_unstable();
        part.train_nodes = train;
    }
}

/// Splits a partition's train nodes round-robin (by ascending id) across its
/// trainers. Trainer `t` receives elements t, t + R, t + 2R, ...
pub fn assign_trainers(
    partition: &Partition,
    trainers_per_partition: usize,
) -> Result<Vec<Vec<NodeId>>, GraphError> {
    if trainers_per_partition == 0 {
        return Err(GraphError::ZeroTrainers);
    }
    let mut out = vec![Vec::new(); trainers_per_partition];
    for (i, &n) in partition.train_nodes.iter().enumerate() {
        out[i % trainers_per_partition].push(n);
    }
    Ok(out)
}
