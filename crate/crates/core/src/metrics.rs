//! Per-step records, per-trainer summaries, and run-level aggregates, with
//! CSV and JSON emission.
//!
//! The CSV schema is fixed at 17 columns. All times are integer nanoseconds;
//! `hit_rate` is left empty on steps that touched no halo nodes. The JSON
//! document mirrors the rows and adds the computed aggregates, and reading it
//! back reproduces those aggregates bit for bit.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::FetchLedger;
use crate::graph::PartitionId;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o failed: {0}")]
    Io(#[from] io::Error),
    #[error("json encode/decode failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which pipeline produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Baseline,
    Prefetch,
}

/// How step durations were obtained: summed on a virtual clock, or measured
/// on real threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    Virtual,
    Wallclock,
}

/// Phase durations of one step, in nanoseconds.
///
/// Invariant: `prepare_ns` equals sampling + lookup + max(scoring, max(rpc,
/// copy)); scoring and the transfer overlap inside the preparation. Baseline
/// steps have zero lookup and scoring, so the same formula reduces to
/// sampling + transfer. In wallclock runs `stall_ns` is the measured wait for
/// the prepared block; everywhere else it comes from the schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub sampling_ns: u64,
    pub lookup_ns: u64,
    pub scoring_ns: u64,
    pub rpc_ns: u64,
    pub copy_ns: u64,
    pub prepare_ns: u64,
    pub ddp_ns: u64,
    pub stall_ns: u64,
}

impl StepTiming {
    /// Build a timing with `prepare_ns` derived from the parts and no stall.
    pub fn new(sampling_ns: u64, lookup_ns: u64, scoring_ns: u64, rpc_ns: u64, copy_ns: u64, ddp_ns: u64) -> Self {
        StepTiming {
            sampling_ns,
            lookup_ns,
            scoring_ns,
            rpc_ns,
            copy_ns,
            prepare_ns: sampling_ns + lookup_ns + scoring_ns.max(rpc_ns.max(copy_ns)),
            ddp_ns,
            stall_ns: 0,
        }
    }
}

/// One trained step of one trainer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trainer: u32,
    pub epoch: u32,
    /// Step index within the trainer's run, across epochs.
    pub step: u64,
    pub hits: u64,
    pub misses: u64,
    pub evicted: u64,
    pub replaced: u64,
    pub timing: StepTiming,
}

impl StepRecord {
    pub fn hit_rate(&self) -> Option<f64> {
        hit_rate(self.hits, self.misses)
    }
}

/// Buffer hit fraction; undefined when no halo nodes were requested.
pub fn hit_rate(hits: u64, misses: u64) -> Option<f64> {
    let total = hits + misses;
    if total == 0 {
        None
    } else {
        Some(hits as f64 / total as f64)
    }
}

/// Per-trainer totals that do not fit the per-step rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerStats {
    pub trainer: u32,
    pub partition: PartitionId,
    /// Schedule (or measured) length of this trainer's run.
    pub total_ns: u64,
    /// One-off buffer fill cost, excluded from `total_ns`.
    pub init_rpc_ns: u64,
    pub ledger: FetchLedger,
    /// Preparation that overlapped the final training step; absent on
    /// baseline runs, which never work ahead.
    pub tail_prepare_ns: Option<u64>,
    /// Eviction rounds executed, counting the tail preparation.
    pub eviction_rounds: u64,
    /// Score-table sweep cost attributable to eviction rounds.
    pub eviction_lookup_ns: u64,
    /// Wall-clock duration of the first preparation; wallclock runs only.
    pub first_prepare_wall_ns: Option<u64>,
}

/// Complete result of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub mode: RunMode,
    pub clock: ClockMode,
    /// Run length: the slowest trainer's total.
    pub total_ns: u64,
    pub steps: Vec<StepRecord>,
    pub trainers: Vec<TrainerStats>,
}

/// Derived run-level summary. Every field is recomputable from the rows and
/// trainer summaries, which is what makes the JSON round trip checkable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub total_ns: u64,
    pub steps_recorded: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: Option<f64>,
    pub evicted: u64,
    pub replaced: u64,
    pub eviction_rounds: u64,
    pub eviction_lookup_ns: u64,
    pub init_rpc_ns: u64,
    pub ledger: FetchLedger,
    pub fetch_reduction: Option<f64>,
    pub overlap_efficiency: f64,
}

/// Fraction of baseline-equivalent fetch volume saved by the buffer.
/// Negative when replacements outweigh the savings; undefined when the run
/// requested no halo features at all.
pub fn fetch_reduction(ledger: &FetchLedger) -> Option<f64> {
    if ledger.baseline_equivalent_halo_nodes == 0 {
        None
    } else {
        Some(
            1.0 - ledger.steady_state_fetch_nodes() as f64
                / ledger.baseline_equivalent_halo_nodes as f64,
        )
    }
}

/// How completely preparation hid behind training: 1 when training never
/// waited. Defined as 1 - stall / (stall + train); 1.0 for empty runs.
pub fn overlap_efficiency(steps: &[StepRecord]) -> f64 {
    let stall: u64 = steps.iter().map(|s| s.timing.stall_ns).sum();
    let train: u64 = steps.iter().map(|s| s.timing.ddp_ns).sum();
    if stall + train == 0 {
        1.0
    } else {
        1.0 - stall as f64 / (stall + train) as f64
    }
}

/// Hit rate over an inclusive window of step indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub start_step: u64,
    pub end_step: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: Option<f64>,
}

/// Aggregate hit rates over non-overlapping windows of `window` consecutive
/// step indices, pooled across trainers.
pub fn windowed_trajectory(steps: &[StepRecord], window: u64) -> Vec<TrajectoryPoint> {
    assert!(window > 0, "window must be positive");
    let max_step = match steps.iter().map(|s| s.step).max() {
        Some(m) => m,
        None => return Vec::new(),
    };
    let n_windows = max_step / window + 1;
    let mut points: Vec<TrajectoryPoint> = (0..n_windows)
        .map(|w| TrajectoryPoint {
            start_step: w * window,
            end_step: (w + 1) * window - 1, // inclusive
            hits: 0,
            misses: 0,
            hit_rate: None,
        })
        .collect();
    for s in steps {
        let p = &mut points[(s.step / window) as usize];
        p.hits += s.hits;
        p.misses += s.misses;
    }
    for p in &mut points {
        p.hit_rate = hit_rate(p.hits, p.misses);
    }
    points
}

impl RunMetrics {
    pub fn aggregates(&self) -> Aggregates {
        let hits: u64 = self.steps.iter().map(|s| s.hits).sum();
        let misses: u64 = self.steps.iter().map(|s| s.misses).sum();
        let mut ledger = FetchLedger::default();
        for t in &self.trainers {
            ledger.merge(&t.ledger);
        }
        Aggregates {
            total_ns: self.total_ns,
            steps_recorded: self.steps.len() as u64,
            hits,
            misses,
            hit_rate: hit_rate(hits, misses),
            evicted: self.steps.iter().map(|s| s.evicted).sum(),
            replaced: self.steps.iter().map(|s| s.replaced).sum(),
            eviction_rounds: self.trainers.iter().map(|t| t.eviction_rounds).sum(),
            eviction_lookup_ns: self.trainers.iter().map(|t| t.eviction_lookup_ns).sum(),
            init_rpc_ns: self.trainers.iter().map(|t| t.init_rpc_ns).sum(),
            ledger,
            fetch_reduction: fetch_reduction(&ledger),
            overlap_efficiency: overlap_efficiency(&self.steps),
        }
    }

    /// Write the per-step rows as CSV. Exactly 17 columns; header always
    /// present, even with no rows.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for s in &self.steps {
            wtr.serialize(Row::from_step(&self.run_id, s))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_json<W: io::Write>(&self, w: W) -> Result<(), MetricsError> {
        let doc = MetricsDocument {
            run_id: self.run_id.clone(),
            mode: self.mode,
            clock: self.clock,
            total_ns: self.total_ns,
            aggregates: self.aggregates(),
            trainers: self.trainers.clone(),
            steps: self.steps.iter().map(|s| Row::from_step(&self.run_id, s)).collect(),
        };
        serde_json::to_writer_pretty(w, &doc)?;
        Ok(())
    }

    /// Read a JSON document back into run metrics plus the aggregates it was
    /// written with.
    pub fn read_json<R: io::Read>(r: R) -> Result<(RunMetrics, Aggregates), MetricsError> {
        let doc: MetricsDocument = serde_json::from_reader(r)?;
        let metrics = RunMetrics {
            run_id: doc.run_id,
            mode: doc.mode,
            clock: doc.clock,
            total_ns: doc.total_ns,
            steps: doc.steps.iter().map(Row::to_step).collect(),
            trainers: doc.trainers,
        };
        Ok((metrics, doc.aggregates))
    }
}

pub const CSV_HEADER: [&str; 17] = [
    "run_id", "trainer", "epoch", "step", "h", "m", "hit_rate", "evicted", "replaced",
    "t_sampling", "t_lookup", "t_scoring", "t_rpc", "t_copy", "t_prepare", "t_ddp", "stall",
];

/// Flat row shape shared by the CSV and the JSON `steps` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    run_id: String,
    trainer: u32,
    epoch: u32,
    step: u64,
    h: u64,
    m: u64,
    hit_rate: Option<f64>,
    evicted: u64,
    replaced: u64,
    t_sampling: u64,
    t_lookup: u64,
    t_scoring: u64,
    t_rpc: u64,
    t_copy: u64,
    t_prepare: u64,
    t_ddp: u64,
    stall: u64,
}

impl Row {
    fn from_step(run_id: &str, s: &StepRecord) -> Row {
        Row {
            run_id: run_id.to_string(),
            trainer: s.trainer,
            epoch: s.epoch,
            step: s.step,
            h: s.hits,
            m: s.misses,
            hit_rate: s.hit_rate(),
            evicted: s.evicted,
            replaced: s.replaced,
            t_sampling: s.timing.sampling_ns,
            t_lookup: s.timing.lookup_ns,
            t_scoring: s.timing.scoring_ns,
            t_rpc: s.timing.rpc_ns,
            t_copy: s.timing.copy_ns,
            t_prepare: s.timing.prepare_ns,
            t_ddp: s.timing.ddp_ns,
            stall: s.timing.stall_ns,
        }
    }

    fn to_step(&self) -> StepRecord {
        StepRecord {
            trainer: self.trainer,
            epoch: self.epoch,
            step: self.step,
            hits: self.h,
            misses: self.m,
            evicted: self.evicted,
            replaced: self.replaced,
            timing: StepTiming {
                sampling_ns: self.t_sampling,
                lookup_ns: self.t_lookup,
                scoring_ns: self.t_scoring,
                rpc_ns: self.t_rpc,
                copy_ns: self.t_copy,
                prepare_ns: self.t_prepare,
                ddp_ns: self.t_ddp,
                stall_ns: self.stall,
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsDocument {
    run_id: String,
    mode: RunMode,
    clock: ClockMode,
    total_ns: u64,
    aggregates: Aggregates,
    trainers: Vec<TrainerStats>,
    steps: Vec<Row>,
}
