//! Graph ingestion: edge-list files, synthetic generators, and partitioners.
//!
//! Edge-list format: one `src dst` pair per line, whitespace separated,
//! `#` starts a comment line, blank lines ignored. Node count is
//! `1 + max id` unless an explicit override is given (overrides allow
//! trailing isolated vertices). Partition-map format: one `node_id
//! partition_id` pair per line, same comment rules.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GlobalGraph, GraphError, NodeId, PartitionId};
use crate::rng;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: no edges and no node-count override")]
    EmptyEdgeList { path: String },
    #[error("invalid generator parameter: {0}")]
    InvalidGenerator(String),
    #[error("num_partitions {k} invalid for a graph with {n} nodes")]
    BadPartitionCount { k: usize, n: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Load-time options for edge-list files.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub directed: bool,
    pub feature_dim: usize,
    /// Forces the node count (must exceed every id in the file); `None`
    /// derives it as `1 + max id`.
    pub num_nodes_override: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            directed: false,
            feature_dim: 16,
            num_nodes_override: None,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_pair(path: &Path, lineno: usize, line: &str) -> Result<Option<(u64, u64)>, IngestError> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let mut fields = body.split_whitespace();
    let parse = |field: Option<&str>, what: &str| -> Result<u64, IngestError> {
        field
            .ok_or_else(|| IngestError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("missing {what}"),
            })?
            .parse::<u64>()
            .map_err(|e| IngestError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("bad {what}: {e}"),
            })
    };
    let a = parse(fields.next(), "first field")?;
    let b = parse(fields.next(), "second field")?;
    if let Some(extra) = fields.next() {
        return Err(IngestError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("unexpected trailing field {extra:?}"),
        });
    }
    Ok(Some((a, b)))
}

/// Reads an edge-list file into a graph.
pub fn read_edge_list(path: &Path, opts: &LoadOptions) -> Result<GlobalGraph, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    let mut max_id: Option<u64> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if let Some((u, v)) = parse_pair(path, idx + 1, &line)? {
            for id in [u, v] {
                if id > u64::from(NodeId::MAX) {
                    return Err(IngestError::Parse {
                        path: path.display().to_string(),
                        line: idx + 1,
                        msg: format!("node id {id} exceeds supported range"),
                    });
                }
            }
            max_id = Some(max_id.map_or(u.max(v), |m: u64| m.max(u).max(v)));
            edges.push((u as NodeId, v as NodeId));
        }
    }
    let derived = max_id.map(|m| m as usize + 1);
    let num_nodes = match (opts.num_nodes_override, derived) {
        (Some(n), Some(d)) if n < d => {
            return Err(IngestError::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: format!("node-count override {n} is below 1 + max id {d}"),
            })
        }
        (Some(n), _) => n,
        (None, Some(d)) => d,
        (None, None) => {
            return Err(IngestError::EmptyEdgeList {
                path: path.display().to_string(),
            })
        }
    };
    Ok(GlobalGraph::from_edges(
        num_nodes,
        &edges,
        opts.directed,
        opts.feature_dim,
    )?)
}

/// Writes the canonical edge list (one edge per line).
pub fn write_edge_list(path: &Path, graph: &GlobalGraph) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    );
    writeln!(out, "# nodes {} edges {}", graph.num_nodes(), graph.num_edges())
        .map_err(|e| io_err(path, e))?;
    for (u, v) in graph.edges() {
        writeln!(out, "{u} {v}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads a `node_id partition_id` map.
pub fn read_partition_map(path: &Path) -> Result<HashMap<NodeId, PartitionId>, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut map = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if let Some((node, part)) = parse_pair(path, idx + 1, &line)? {
            if node > u64::from(NodeId::MAX) || part > u64::from(PartitionId::MAX) {
                return Err(IngestError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: "id exceeds supported range".into(),
                });
            }
            map.insert(node as NodeId, part as PartitionId);
        }
    }
    Ok(map)
}

/// Writes a partition map, ids ascending.
pub fn write_partition_map(
    path: &Path,
    ownership: &HashMap<NodeId, PartitionId>,
) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    );
    let mut ids: Vec<NodeId> = ownership.keys().copied().collect();
    ids.sort_unstable();
    for n in ids {
        writeln!(out, "{n} {}", ownership[&n]).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Synthetic graph family, seed-deterministic.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// Recursive-matrix generator with the usual skewed quadrant weights;
    /// node count rounds up to a power of two.
    Rmat { num_nodes: usize, num_edges: usize, rng_seed: u64 },
    /// Preferential attachment: each new node attaches to `attachment`
    /// distinct existing nodes.
    BarabasiAlbert { num_nodes: usize, attachment: usize, rng_seed: u64 },
    /// Uniform random graph with exactly `num_edges` distinct edges.
    ErdosRenyi { num_nodes: usize, num_edges: usize, rng_seed: u64 },
}

impl GeneratorSpec {
    pub fn num_nodes(&self) -> usize {
        match *self {
            GeneratorSpec::Rmat { num_nodes, .. } => num_nodes.next_power_of_two(),
            GeneratorSpec::BarabasiAlbert { num_nodes, .. } => num_nodes,
            GeneratorSpec::ErdosRenyi { num_nodes, .. } => num_nodes,
        }
    }
}

/// Generates an undirected simple graph (no self loops, no duplicates).
pub fn generate(spec: &GeneratorSpec, feature_dim: usize) -> Result<GlobalGraph, IngestError> {
    let edges = match *spec {
        GeneratorSpec::ErdosRenyi {
            num_nodes,
            num_edges,
            rng_seed,
        } => {
            if num_nodes < 2 {
                return Err(IngestError::InvalidGenerator(
                    "erdos-renyi needs at least 2 nodes".into(),
                ));
            }
            let max_edges = num_nodes * (num_nodes - 1) / 2;
            if num_edges > max_edges {
                return Err(IngestError::InvalidGenerator(format!(
                    "erdos-renyi cannot place {num_edges} distinct edges on {num_nodes} nodes"
                )));
            }
            let mut r = rng::stream(rng_seed, &[rng::tag::GENERATE, 1]);
            let mut seen = HashSet::with_capacity(num_edges);
            let mut edges = Vec::with_capacity(num_edges);
            while edges.len() < num_edges {
                let u = r.gen_range(0..num_nodes as NodeId);
                let v = r.gen_range(0..num_nodes as NodeId);
                if u == v {
                    continue;
                }
                let key = (u.min(v), u.max(v));
                if seen.insert(key) {
                    edges.push(key);
                }
            }
            edges
        }
        GeneratorSpec::BarabasiAlbert {
            num_nodes,
            attachment,
            rng_seed,
        } => {
            if attachment == 0 || num_nodes <= attachment {
                return Err(IngestError::InvalidGenerator(format!(
                    "barabasi-albert needs 0 < attachment ({attachment}) < num_nodes ({num_nodes})"
                )));
            }
            let mut r = rng::stream(rng_seed, &[rng::tag::GENERATE, 2]);
            let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
            // Endpoint pool: each occurrence is one edge endpoint, so
            // sampling from it is degree-proportional.
            let mut pool: Vec<NodeId> = Vec::new();
            // Seed star over the first attachment+1 nodes.
            for v in 1..=attachment as NodeId {
                edges.push((0, v));
                pool.extend([0, v]);
            }
            for new in (attachment as NodeId + 1)..num_nodes as NodeId {
                let mut targets: HashSet<NodeId> = HashSet::with_capacity(attachment);
                while targets.len() < attachment {
                    let t = pool[r.gen_range(0..pool.len())];
                    targets.insert(t);
                }
                let mut ts: Vec<NodeId> = targets.into_iter().collect();
                ts.sort_unstable();
                for t in ts {
                    edges.push((t, new));
                    pool.extend([t, new]);
                }
            }
            edges
        }
        GeneratorSpec::Rmat {
            num_nodes,
            num_edges,
            rng_seed,
        } => {
            let n = num_nodes.next_power_of_two();
            if n < 2 {
                return Err(IngestError::InvalidGenerator("rmat needs at least 2 nodes".into()));
            }
            let scale = n.trailing_zeros();
            // Quadrant weights (a, b, c); d is the remainder. The standard
            // skewed setting yields a heavy-tailed degree distribution.
            const A: f64 = 0.57;
            const B: f64 = 0.19;
            const C: f64 = 0.19;
            let mut r = rng::stream(rng_seed, &[rng::tag::GENERATE, 3]);
            let mut seen = HashSet::with_capacity(num_edges);
            let mut edges = Vec::with_capacity(num_edges);
            let max_edges = n * (n - 1) / 2;
            if num_edges > max_edges {
                return Err(IngestError::InvalidGenerator(format!(
                    "rmat cannot place {num_edges} distinct edges on {n} nodes"
                )));
            }
            while edges.len() < num_edges {
                let (mut u, mut v) = (0u64, 0u64);
                for _ in 0..scale {
                    let x: f64 = r.gen();
                    let (du, dv) = if x < A {
                        (0, 0)
                    } else if x < A + B {
                        (0, 1)
                    } else if x < A + B + C {
                        (1, 0)
                    } else {
                        (1, 1)
                    };
                    u = (u << 1) | du;
                    v = (v << 1) | dv;
                }
                let (u, v) = (u as NodeId, v as NodeId);
                if u == v {
                    continue;
                }
                let key = (u.min(v), u.max(v));
                if seen.insert(key) {
                    edges.push(key);
                }
            }
            edges
        }
    };
    let num_nodes = spec.num_nodes();
    Ok(GlobalGraph::from_edges(num_nodes, &edges, false, feature_dim)?)
}

/// Trivial partitioner: `owner(n) = n mod k`.
pub fn partition_hash(
    graph: &GlobalGraph,
    num_partitions: usize,
) -> Result<HashMap<NodeId, PartitionId>, IngestError> {
    check_partition_count(graph, num_partitions)?;
    Ok((0..graph.num_nodes() as NodeId)
        .map(|n| (n, n % num_partitions as PartitionId))
        .collect())
}

/// Locality-aware partitioner: grows `k` balanced BFS regions. Each region
/// stops at ceil(|V| / k) nodes; BFS restarts from the lowest unassigned id
/// whenever a frontier empties, so disconnected graphs still partition.
pub fn partition_greedy_bfs(
    graph: &GlobalGraph,
    num_partitions: usize,
) -> Result<HashMap<NodeId, PartitionId>, IngestError> {
    check_partition_count(graph, num_partitions)?;
    let n = graph.num_nodes();
    let target = n.div_ceil(num_partitions);
    let mut owner: Vec<Option<PartitionId>> = vec![None; n];
    let mut next_unassigned = 0usize;
    let mut queue = std::collections::VecDeque::new();
    for pid in 0..num_partitions as PartitionId {
        let mut size = 0usize;
        queue.clear();
        while size < target {
            let seed = match queue.pop_front() {
                Some(v) => v,
                None => {
                    while next_unassigned < n && owner[next_unassigned].is_some() {
                        next_unassigned += 1;
                    }
                    if next_unassigned == n {
                        break; // everything assigned; later partitions may stay empty
                    }
                    next_unassigned as NodeId
                }
            };
            if owner[seed as usize].is_some() {
                continue;
            }
            owner[seed as usize] = Some(pid);
            size += 1;
            for &nb in graph.neighbors_of(seed) {
                if owner[nb as usize].is_none() {
                    queue.push_back(nb);
                }
            }
        }
    }
    Ok(owner
        .into_iter()
        .enumerate()
        .map(|(i, o)| (i as NodeId, o.unwrap_or((num_partitions - 1) as PartitionId)))
        .collect())
}

fn check_partition_count(graph: &GlobalGraph, k: usize) -> Result<(), IngestError> {
    if k == 0 || k > graph.num_nodes() {
        return Err(IngestError::BadPartitionCount {
            k,
            n: graph.num_nodes(),
        });
    }
    Ok(())
}

/// Shuffles node ids of a graph; used by tests to decouple id order from
/// structure. Returns the permuted edge list.
pub fn permute_node_ids(graph: &GlobalGraph, seed: u64) -> Vec<(NodeId, NodeId)> {
    let mut perm: Vec<NodeId> = (0..graph.num_nodes() as NodeId).collect();
    let mut r = rng::stream(seed, &[rng::tag::GENERATE, 4]);
    perm.shuffle(&mut r);
    graph
        .edges()
        .into_iter()
        .map(|(u, v)| (perm[u as usize], perm[v as usize]))
        .collect()
}
