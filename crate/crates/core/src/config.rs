//! Run configuration: JSON schema, defaults, validation, and turning a
//! validated config into a runnable world.
//!
//! Every semantic check reports the offending key path, so a bad file fails
//! with `sampling.batch_size: must be at least 1` rather than a panic deep in
//! the run.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CommError, CostModel};
use crate::graph::{
    assign_trainers, build_partitioned_graph, select_train_nodes, GraphError, NodeId, PartitionId,
};
use crate::ingest::{self, GeneratorSpec, IngestError, LoadOptions};
use crate::metrics::ClockMode;
use crate::pipeline::{TrainerSpec, World};
use crate::prefetch::{AccessBackend, PolicyParams, PrefetchError};
use crate::rng;
use crate::sampler::FanoutSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn invalid(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), msg: msg.into() }
}

/// Where the graph comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Edge-list file to load; mutually exclusive with `generate`.
    pub file: Option<FileSource>,
    /// Synthetic graph recipe; mutually exclusive with `file`.
    pub generate: Option<GeneratorSpec>,
    pub feature_dim: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            file: None,
            generate: Some(GeneratorSpec::BarabasiAlbert {
                num_nodes: 1000,
                attachment: 4,
                rng_seed: 1,
            }),
            feature_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub num_nodes_override: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    /// Node id modulo partition count; high edge cut, zero cost.
    Hash,
    /// Breadth-first region growing; locality-preserving.
    GreedyBfs,
    /// Read node-to-partition assignments from `map_file`.
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub num_partitions: usize,
    pub method: PartitionMethod,
    /// Required when `method` is `file`.
    pub map_file: Option<PathBuf>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            num_partitions: 2,
            method: PartitionMethod::GreedyBfs,
            map_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Per-layer neighbor caps, outermost layer first.
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { fanouts: vec![10, 25], batch_size: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Steps per hit-rate trajectory window.
    pub window: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { window: 50 }
    }
}

/// Parameter grid for sweep runs: the cross product of the three lists.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub decays: Vec<f64>,
    pub intervals: Vec<u64>,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub graph: GraphConfig,
    pub partitioning: PartitionConfig,
    pub trainers_per_partition: usize,
    pub sampling: SamplingConfig,
    /// Fraction of each partition's local nodes used as training seeds.
    pub train_fraction: f64,
    pub epochs: u32,
    pub policy: PolicyParams,
    pub access_backend: AccessBackend,
    /// Prepared-block queue depth.
    pub lookahead: usize,
    pub cost_model: CostModel,
    pub mode: ClockMode,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".to_string(),
            seed: 42,
            graph: GraphConfig::default(),
            partitioning: PartitionConfig::default(),
            trainers_per_partition: 1,
            sampling: SamplingConfig::default(),
            train_fraction: 0.1,
            epochs: 1,
            policy: PolicyParams::default(),
            access_backend: AccessBackend::Dense,
            lookahead: 1,
            cost_model: CostModel::default(),
            mode: ClockMode::Virtual,
            output: OutputConfig::default(),
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let file = File::open(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_reader(BufReader::new(file))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let file = File::create(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_id.is_empty() {
            return Err(invalid("run_id", "must not be empty"));
        }
        match (&self.graph.file, &self.graph.generate) {
            (None, None) => {
                return Err(invalid("graph", "one of `file` or `generate` is required"))
            }
            (Some(_), Some(_)) => {
                return Err(invalid("graph", "`file` and `generate` are mutually exclusive"))
            }
            _ => {}
        }
        if self.graph.feature_dim == 0 {
            return Err(invalid("graph.feature_dim", "must be at least 1"));
        }
        if self.partitioning.num_partitions == 0 {
            return Err(invalid("partitioning.num_partitions", "must be at least 1"));
        }
        if self.partitioning.method == PartitionMethod::File
            && self.partitioning.map_file.is_none()
        {
            return Err(invalid(
                "partitioning.map_file",
                "required when partitioning.method is \"file\"",
            ));
        }
        if self.trainers_per_partition == 0 {
            return Err(invalid("trainers_per_partition", "must be at least 1"));
        }
        if FanoutSpec::new(self.sampling.fanouts.clone()).is_none() {
            return Err(invalid(
                "sampling.fanouts",
                "must be non-empty with every fanout at least 1",
            ));
        }
        if self.sampling.batch_size == 0 {
            return Err(invalid("sampling.batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) || self.train_fraction.is_nan() {
            return Err(invalid("train_fraction", "must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        self.policy
            .validate()
            .map_err(|e: PrefetchError| invalid("policy", e.to_string()))?;
        if self.lookahead == 0 {
            return Err(invalid("lookahead", "must be at least 1"));
        }
        self.cost_model
            .validate()
            .map_err(|e: CommError| invalid("cost_model", e.to_string()))?;
        if self.output.window == 0 {
            return Err(invalid("output.window", "must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.fractions.is_empty() || sweep.decays.is_empty() || sweep.intervals.is_empty()
            {
                return Err(invalid(
                    "sweep",
                    "fractions, decays, and intervals must each list at least one value",
                ));
            }
            for (i, f) in sweep.fractions.iter().enumerate() {
                if !(0.0..=1.0).contains(f) || f.is_nan() {
                    return Err(invalid(
                        &format!("sweep.fractions[{i}]"),
                        "must lie in [0, 1]",
                    ));
                }
            }
            for (i, d) in sweep.decays.iter().enumerate() {
                if !(*d > 0.0 && *d <= 1.0) {
                    return Err(invalid(&format!("sweep.decays[{i}]"), "must lie in (0, 1]"));
                }
            }
            for (i, v) in sweep.intervals.iter().enumerate() {
                if *v == 0 {
                    return Err(invalid(
                        &format!("sweep.intervals[{i}]"),
                        "must be at least 1",
                    ));
                }
            }
        }
        Ok(())
    }

    /// All policy variants a sweep covers, in grid order.
    pub fn sweep_points(&self) -> Vec<PolicyParams> {
        let Some(sweep) = &self.sweep else {
            return vec![self.policy];
        };
        let mut points = Vec::new();
        for &fraction in &sweep.fractions {
            for &decay in &sweep.decays {
                for &interval in &sweep.intervals {
                    points.push(PolicyParams { fraction, decay, interval, ..self.policy });
                }
            }
        }
        points
    }
}

/// Builds the partitioned graph and trainer roster a config describes.
pub fn build_world(cfg: &RunConfig) -> Result<World, ConfigError> {
    cfg.validate()?;
    let graph = match (&cfg.graph.file, &cfg.graph.generate) {
        (Some(src), None) => ingest::read_edge_list(
            &src.path,
            &LoadOptions {
                directed: src.directed,
                feature_dim: cfg.graph.feature_dim,
                num_nodes_override: src.num_nodes_override,
            },
        )?,
        (None, Some(spec)) => ingest::generate(spec, cfg.graph.feature_dim)?,
        _ => unreachable!("validate enforces exactly one graph source"),
    };

    let k = cfg.partitioning.num_partitions;
    let ownership: HashMap<NodeId, PartitionId> = match cfg.partitioning.method {
        PartitionMethod::Hash => ingest::partition_hash(&graph, k)?,
        PartitionMethod::GreedyBfs => ingest::partition_greedy_bfs(&graph, k)?,
        PartitionMethod::File => {
            let path = cfg.partitioning.map_file.as_ref().expect("validated");
            ingest::read_partition_map(path)?
        }
    };

    let mut pg = build_partitioned_graph(graph, &ownership, k)?;
    select_train_nodes(&mut pg, cfg.train_fraction, cfg.seed);

    let mut trainers = Vec::with_capacity(k * cfg.trainers_per_partition);
    for p in 0..k {
        let split = assign_trainers(&pg.partitions[p], cfg.trainers_per_partition)?;
        for (slot, train_nodes) in split.into_iter().enumerate() {
            trainers.push(TrainerSpec {
                id: (p * cfg.trainers_per_partition + slot) as u32,
                partition: p as PartitionId,
                train_nodes,
            });
        }
    }

    Ok(World {
        pg: Arc::new(pg),
        trainers,
        fanouts: FanoutSpec::new(cfg.sampling.fanouts.clone()).expect("validated"),
        batch_size: cfg.sampling.batch_size,
        epochs: cfg.epochs,
        cost: cfg.cost_model.clone(),
        policy: cfg.policy,
        backend: cfg.access_backend,
        lookahead: cfg.lookahead,
        seed: cfg.seed,
        feature_seed: rng::mix_key(cfg.seed, &[rng::tag::FEATURES]),
        run_id: cfg.run_id.clone(),
    })
}
