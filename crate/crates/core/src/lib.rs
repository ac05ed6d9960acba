//! Simulator for distributed minibatch training over a partitioned graph
//! with a per-trainer halo-feature buffer.
//!
//! Remote feature fetches dominate step time when a minibatch touches nodes
//! owned by other partitions. Each trainer therefore keeps a buffer of
//! frequently used halo features, refreshed by periodic evict-and-replace
//! rounds driven by two scoreboards: a decaying score for buffered nodes and
//! a miss counter for nodes outside the buffer. Minibatch preparation runs
//! concurrently with training, so fetch time hides behind compute.
//!
//! The crate is organized as a stack: deterministic RNG streams ([`rng`]),
//! graph and partition structure ([`graph`], [`ingest`]), minibatch sampling
//! ([`sampler`]), priced communication ([`comm`]), the buffer policy
//! ([`prefetch`]), the execution engines ([`pipeline`]), closed-form timing
//! ([`perf_model`]), and run outputs ([`metrics`]), configured through
//! [`config`].

pub mod comm;
pub mod config;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod perf_model;
pub mod pipeline;
pub mod prefetch;
pub mod rng;
pub mod sampler;

pub use comm::{CommError, CostModel, FetchKind, FetchLedger, FeatureSource};
pub use config::{build_world, ConfigError, RunConfig};
pub use graph::{
    FeatureVector, GlobalGraph, GraphError, NodeId, Partition, PartitionId, PartitionedGraph,
};
pub use ingest::{GeneratorSpec, IngestError};
pub use metrics::{
    Aggregates, ClockMode, MetricsError, RunMetrics, RunMode, StepRecord, StepTiming, TrainerStats,
};
pub use perf_model::{ComponentTimes, PerfModelError};
pub use pipeline::{PipelineError, TrainerSpec, World};
pub use prefetch::{AccessBackend, EvictReplaceOutcome, PolicyParams, PrefetchError, PrefetchState};
pub use sampler::{FanoutSpec, SampledBlock};
