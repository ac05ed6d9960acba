//! Execution engines: the unoverlapped baseline and the prepare-ahead
//! pipeline, on a virtual clock or on real threads.
//!
//! A trainer's run is a stream of minibatch preparations feeding a stream of
//! training steps through a bounded queue. The prefetch engine always works
//! one block past the final trained step (the first batch of the next
//! epoch), so every training step has a concurrent preparation and the
//! closed-form model applies exactly. The wallclock engine executes the same
//! logical sequence on producer/consumer threads; hits, misses, and
//! evictions are identical to the virtual run, only measured durations
//! differ.

use std::any::Any;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::comm::{fetch_remote, CommError, CostModel, FeatureSource, FetchKind, FetchLedger};
use crate::graph::{NodeId, Partition, PartitionId, PartitionedGraph};
use crate::metrics::{ClockMode, RunMetrics, RunMode, StepRecord, StepTiming, TrainerStats};
use crate::prefetch::{initialize_prefetcher, AccessBackend, PolicyParams, PrefetchState};
use crate::sampler::{batches_per_epoch, epoch_order, next_batch, sample_block, FanoutSpec, SampledBlock};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("communication failed: {0}")]
    Comm(#[from] CommError),
    #[error("worker thread failed: {0}")]
    WorkerPanic(String),
}

/// One logical trainer bound to a partition.
#[derive(Debug, Clone)]
pub struct TrainerSpec {
    /// Globally unique trainer id.
    pub id: u32,
    pub partition: PartitionId,
    /// Seed nodes this trainer draws its minibatches from, ascending.
    pub train_nodes: Vec<NodeId>,
}

/// Everything a run needs: the partitioned graph plus schedule settings.
#[derive(Debug, Clone)]
pub struct World {
    pub pg: Arc<PartitionedGraph>,
    pub trainers: Vec<TrainerSpec>,
    pub fanouts: FanoutSpec,
    pub batch_size: usize,
    pub epochs: u32,
    pub cost: CostModel,
    pub policy: PolicyParams,
    pub backend: AccessBackend,
    /// Depth of the prepared-block queue, >= 1.
    pub lookahead: usize,
    pub seed: u64,
    pub feature_seed: u64,
    pub run_id: String,
}

impl World {
    pub fn feature_source(&self) -> FeatureSource<'_> {
        FeatureSource::new(&self.pg, self.feature_seed)
    }

    fn partition_of(&self, spec: &TrainerSpec) -> &Partition {
        &self.pg.partitions[spec.partition as usize]
    }

    /// Trained steps one trainer runs: batches per epoch times epochs.
    pub fn trainer_steps(&self, spec: &TrainerSpec) -> u64 {
        batches_per_epoch(spec.train_nodes.len(), self.batch_size) as u64 * u64::from(self.epochs)
    }
}

/// Dispatch on mode. Baseline runs have no overlap to exercise, so they are
/// always evaluated on the virtual clock.
pub fn run(world: &World, mode: RunMode, clock: ClockMode) -> Result<RunMetrics, PipelineError> {
    match (mode, clock) {
        (RunMode::Baseline, _) => run_baseline(world),
        (RunMode::Prefetch, ClockMode::Virtual) => run_prefetch(world),
        (RunMode::Prefetch, ClockMode::Wallclock) => run_prefetch_wallclock(world),
    }
}

/// One prepared block plus its schedule-relevant costs.
struct Prepared {
    step: u64,
    epoch: u32,
    hits: u64,
    misses: u64,
    evicted: u64,
    replaced: u64,
    eviction_round: bool,
    /// Modeled phase costs; `stall_ns` is filled in by the scheduler.
    timing: StepTiming,
    eviction_lookup_ns: u64,
    /// Measured preparation duration; wallclock runs only.
    prep_wall_ns: u64,
}

/// Deterministic (epoch, seeds, block) sequence of one trainer. Step `s`
/// maps to epoch `s / batches` and batch `s % batches`; the epoch order is
/// reshuffled at each epoch boundary.
struct BlockIter<'w> {
    world: &'w World,
    spec: &'w TrainerSpec,
    partition: &'w Partition,
    batches: u64,
    order: Vec<NodeId>,
    order_epoch: u32,
}

impl<'w> BlockIter<'w> {
    fn new(world: &'w World, spec: &'w TrainerSpec) -> Self {
        let batches = batches_per_epoch(spec.train_nodes.len(), world.batch_size) as u64;
        let order = epoch_order(&spec.train_nodes, 0, spec.id, world.seed);
        BlockIter {
            world,
            spec,
            partition: world.partition_of(spec),
            batches,
            order,
            order_epoch: 0,
        }
    }

    fn block(&mut self, step: u64) -> (u32, SampledBlock) {
        let epoch = (step / self.batches) as u32;
        if epoch != self.order_epoch {
            self.order = epoch_order(&self.spec.train_nodes, u64::from(epoch), self.spec.id, self.world.seed);
            self.order_epoch = epoch;
        }
        let batch = (step % self.batches) as usize;
        let seeds = next_batch(&self.order, self.world.batch_size, batch).expect("batch index within epoch");
        let block = sample_block(
            self.partition,
            &self.world.pg.graph,
            seeds,
            &self.world.fanouts,
            self.world.seed,
            self.spec.id,
            step,
        );
        (epoch, block)
    }
}

/// Drives one trainer's preparation stream: blocks 0..n are trained, block n
/// is the tail that overlaps the last training step.
struct TrainerDriver<'w> {
    iter: BlockIter<'w>,
    state: PrefetchState,
    ledger: FetchLedger,
    n_steps: u64,
    next: u64,
}

impl<'w> TrainerDriver<'w> {
    fn new(world: &'w World, spec: &'w TrainerSpec) -> Result<(Self, u64), CommError> {
        let iter = BlockIter::new(world, spec);
        let source = world.feature_source();
        let mut ledger = FetchLedger::default();
        let (state, init_rpc_ns) = initialize_prefetcher(
            iter.partition,
            &world.pg.graph,
            spec.id,
            world.policy,
            world.backend,
            &source,
            &world.cost,
            &mut ledger,
        )?;
        let n_steps = world.trainer_steps(spec);
        Ok((Self { iter, state, ledger, n_steps, next: 0 }, init_rpc_ns))
    }

    fn next_prepared(&mut self) -> Option<Result<Prepared, CommError>> {
        if self.n_steps == 0 || self.next > self.n_steps {
            return None;
        }
        let s = self.next;
        self.next += 1;
        Some(self.prepare_one(s))
    }

    fn prepare_one(&mut self, s: u64) -> Result<Prepared, CommError> {
        let world = self.iter.world;
        let (epoch, block) = self.iter.block(s);
        let source = world.feature_source();
        let prep = self.state.prepare_step(&block, self.iter.partition, &source, &world.cost, &mut self.ledger)?;
        let timing = StepTiming::new(
            world.cost.sampling_ns(block.num_nodes()),
            prep.lookup_ns,
            prep.scoring_ns,
            prep.rpc_ns,
            prep.copy_ns,
            world.cost.train_ns(block.num_nodes()),
        );
        Ok(Prepared {
            step: s,
            epoch,
            hits: prep.hits,
            misses: prep.misses,
            evicted: prep.evicted,
            replaced: prep.replaced,
            eviction_round: prep.eviction_round,
            timing,
            eviction_lookup_ns: prep.eviction_lookup_ns,
            prep_wall_ns: 0,
        })
    }
}

/// Start/finish times of a producer preparing blocks `0..=n` and a consumer
/// training blocks `0..n` through a bounded queue.
struct Schedule {
    total_ns: u64,
    /// Per trained step: time spent waiting for its successor's preparation
    /// after its own training finished. The last step also absorbs the wait
    /// for the in-flight tail preparation at run end.
    stall_ns: Vec<u64>,
}

fn schedule_bounded(prepare_ns: &[u64], ddp_ns: &[u64], lookahead: usize) -> Schedule {
    let n = ddp_ns.len();
    assert!(n >= 1, "schedule needs at least one trained step");
    assert_eq!(prepare_ns.len(), n + 1, "one preparation per step plus the tail");
    assert!(lookahead >= 1, "queue depth must be at least 1");

    let mut prep_finish = vec![0u64; n + 1];
    let mut train_start = vec![0u64; n];
    let mut train_finish = vec![0u64; n];
    for k in 0..=n {
        let ready = if k == 0 { 0 } else { prep_finish[k - 1] };
        // A queue slot frees when block k - lookahead is popped for training.
        let slot_free = if k >= lookahead { train_start[k - lookahead] } else { 0 };
        prep_finish[k] = ready.max(slot_free) + prepare_ns[k];
        if k < n {
            let prev_done = if k == 0 { 0 } else { train_finish[k - 1] };
            train_start[k] = prev_done.max(prep_finish[k]);
            train_finish[k] = train_start[k] + ddp_ns[k];
        }
    }

    let mut stall_ns = vec![0u64; n];
    for s in 0..n {
        stall_ns[s] = if s + 1 < n {
            train_start[s + 1] - train_finish[s]
        } else {
            prep_finish[n].saturating_sub(train_finish[s])
        };
    }
    Schedule {
        total_ns: train_finish[n - 1].max(prep_finish[n]),
        stall_ns,
    }
}

struct TrainerOutcome {
    records: Vec<StepRecord>,
    stats: TrainerStats,
}

fn empty_outcome(spec: &TrainerSpec) -> TrainerOutcome {
    TrainerOutcome {
        records: Vec::new(),
        stats: TrainerStats {
            trainer: spec.id,
            partition: spec.partition,
            total_ns: 0,
            init_rpc_ns: 0,
            ledger: FetchLedger::default(),
            tail_prepare_ns: None,
            eviction_rounds: 0,
            eviction_lookup_ns: 0,
            first_prepare_wall_ns: None,
        },
    }
}

fn assemble_run(world: &World, mode: RunMode, clock: ClockMode, outcomes: Vec<TrainerOutcome>) -> RunMetrics {
    let total_ns = outcomes.iter().map(|o| o.stats.total_ns).max().unwrap_or(0);
    let mut steps = Vec::new();
    let mut trainers = Vec::new();
    for o in outcomes {
        steps.extend(o.records);
        trainers.push(o.stats);
    }
    RunMetrics {
        run_id: world.run_id.clone(),
        mode,
        clock,
        total_ns,
        steps,
        trainers,
    }
}

/// Unoverlapped reference: each step samples, fetches every sampled halo
/// node remotely, copies local features, then trains.
pub fn run_baseline(world: &World) -> Result<RunMetrics, PipelineError> {
    let mut outcomes = Vec::with_capacity(world.trainers.len());
    for spec in &world.trainers {
        outcomes.push(run_trainer_baseline(world, spec)?);
    }
    Ok(assemble_run(world, RunMode::Baseline, ClockMode::Virtual, outcomes))
}

fn run_trainer_baseline(world: &World, spec: &TrainerSpec) -> Result<TrainerOutcome, PipelineError> {
    let n = world.trainer_steps(spec);
    if n == 0 {
        return Ok(empty_outcome(spec));
    }
    let mut iter = BlockIter::new(world, spec);
    let source = world.feature_source();
    let mut ledger = FetchLedger::default();
    let mut records = Vec::with_capacity(n as usize);
    let mut total_ns = 0u64;
    for s in 0..n {
        let (epoch, block) = iter.block(s);
        ledger.baseline_equivalent_halo_nodes += block.halo_sampled.len() as u64;
        let fetch = fetch_remote(
            &source,
            spec.partition,
            &block.halo_sampled,
            &world.cost,
            FetchKind::Baseline,
            &mut ledger,
        )?;
        let copy_ns = world.cost.copy_ns(block.local_sampled.len(), source.bytes_per_node());
        let timing = StepTiming::new(
            world.cost.sampling_ns(block.num_nodes()),
            0,
            0,
            fetch.rpc_ns,
            copy_ns,
            world.cost.train_ns(block.num_nodes()),
        );
        total_ns += timing.prepare_ns + timing.ddp_ns;
        records.push(StepRecord {
            trainer: spec.id,
            epoch,
            step: s,
            hits: 0,
            misses: block.halo_sampled.len() as u64,
            evicted: 0,
            replaced: 0,
            timing,
        });
    }
    Ok(TrainerOutcome {
        records,
        stats: TrainerStats {
            trainer: spec.id,
            partition: spec.partition,
            total_ns,
            init_rpc_ns: 0,
            ledger,
            tail_prepare_ns: None,
            eviction_rounds: 0,
            eviction_lookup_ns: 0,
            first_prepare_wall_ns: None,
        },
    })
}

/// Overlapped pipeline on the virtual clock. Trainers are independent; the
/// run total is the slowest trainer's schedule (training costs already model
/// the gradient synchronization barrier).
pub fn run_prefetch(world: &World) -> Result<RunMetrics, PipelineError> {
    let mut outcomes = Vec::with_capacity(world.trainers.len());
    for spec in &world.trainers {
        outcomes.push(run_trainer_prefetch(world, spec)?);
    }
    Ok(assemble_run(world, RunMode::Prefetch, ClockMode::Virtual, outcomes))
}

fn run_trainer_prefetch(world: &World, spec: &TrainerSpec) -> Result<TrainerOutcome, PipelineError> {
    let (mut driver, init_rpc_ns) = TrainerDriver::new(world, spec)?;
    let n = driver.n_steps as usize;
    if n == 0 {
        return Ok(empty_outcome(spec));
    }
    let mut preps = Vec::with_capacity(n + 1);
    while let Some(p) = driver.next_prepared() {
        preps.push(p?);
    }
    debug_assert_eq!(preps.len(), n + 1);

    let prepare: Vec<u64> = preps.iter().map(|p| p.timing.prepare_ns).collect();
    let ddp: Vec<u64> = preps[..n].iter().map(|p| p.timing.ddp_ns).collect();
    let schedule = schedule_bounded(&prepare, &ddp, world.lookahead);

    let records = preps[..n]
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let mut timing = p.timing;
            timing.stall_ns = schedule.stall_ns[s];
            StepRecord {
                trainer: spec.id,
                epoch: p.epoch,
                step: p.step,
                hits: p.hits,
                misses: p.misses,
                evicted: p.evicted,
                replaced: p.replaced,
                timing,
            }
        })
        .collect();
    Ok(TrainerOutcome {
        records,
        stats: TrainerStats {
            trainer: spec.id,
            partition: spec.partition,
            total_ns: schedule.total_ns,
            init_rpc_ns,
            ledger: driver.ledger,
            tail_prepare_ns: Some(preps[n].timing.prepare_ns),
            eviction_rounds: preps.iter().filter(|p| p.eviction_round).count() as u64,
            eviction_lookup_ns: preps.iter().map(|p| p.eviction_lookup_ns).sum(),
            first_prepare_wall_ns: None,
        },
    })
}

/// Busy-wait for `ns`: sleeping would overshoot at microsecond scale.
fn spin_for(ns: u64) {
    let target = Duration::from_nanos(ns);
    let start = Instant::now();
    while start.elapsed() < target {
        std::hint::spin_loop();
    }
}

fn panic_message(e: Box<dyn Any + Send>) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

/// Overlapped pipeline on real threads: one producer preparing blocks, one
/// consumer spin-waiting each training delay, a bounded channel between
/// them. Rows carry the modeled phase costs with measured stalls; trainer
/// totals and the run total are measured wall time. Trainers run one after
/// another so their measurements do not contend.
pub fn run_prefetch_wallclock(world: &World) -> Result<RunMetrics, PipelineError> {
    let mut outcomes = Vec::with_capacity(world.trainers.len());
    for spec in &world.trainers {
        outcomes.push(run_trainer_wallclock(world, spec)?);
    }
    Ok(assemble_run(world, RunMode::Prefetch, ClockMode::Wallclock, outcomes))
}

struct ProducerReport {
    ledger: FetchLedger,
    tail_prepare_ns: u64,
    eviction_rounds: u64,
    eviction_lookup_ns: u64,
    first_prepare_wall_ns: u64,
    done_at: Instant,
}

fn run_trainer_wallclock(world: &World, spec: &TrainerSpec) -> Result<TrainerOutcome, PipelineError> {
    let (driver, init_rpc_ns) = TrainerDriver::new(world, spec)?;
    let n = driver.n_steps;
    if n == 0 {
        return Ok(empty_outcome(spec));
    }

    let (records, report, run_start, last_train_finish) = thread::scope(
        |scope| -> Result<_, PipelineError> {
            let (tx, rx) = mpsc::sync_channel::<Prepared>(world.lookahead);
            let run_start = Instant::now();
            let producer = scope.spawn(move || -> Result<ProducerReport, CommError> {
                let mut driver = driver;
                let mut report = ProducerReport {
                    ledger: FetchLedger::default(),
                    tail_prepare_ns: 0,
                    eviction_rounds: 0,
                    eviction_lookup_ns: 0,
                    first_prepare_wall_ns: 0,
                    done_at: Instant::now(),
                };
                loop {
                    let started = Instant::now();
                    let mut p = match driver.next_prepared() {
                        None => break,
                        Some(r) => r?,
                    };
                    p.prep_wall_ns = started.elapsed().as_nanos() as u64;
                    if p.step == 0 {
                        report.first_prepare_wall_ns = p.prep_wall_ns;
                    }
                    if p.eviction_round {
                        report.eviction_rounds += 1;
                    }
                    report.eviction_lookup_ns += p.eviction_lookup_ns;
                    if p.step == n {
                        // Tail block: prepared to overlap the last training
                        // step, never trained.
                        report.tail_prepare_ns = p.timing.prepare_ns;
                    } else if tx.send(p).is_err() {
                        break;
                    }
                }
                report.ledger = driver.ledger;
                report.done_at = Instant::now();
                Ok(report)
            });

            let mut records: Vec<StepRecord> = Vec::with_capacity(n as usize);
            let mut last_train_finish = run_start;
            for s in 0..n {
                let wait_started = Instant::now();
                let p = match rx.recv() {
                    Ok(p) => p,
                    Err(_) => break, // producer failed; surfaced via join below
                };
                let waited_ns = wait_started.elapsed().as_nanos() as u64;
                spin_for(p.timing.ddp_ns);
                last_train_finish = Instant::now();
                let mut timing = p.timing;
                timing.stall_ns = 0;
                if s > 0 {
                    // The wait observed before popping block s happened after
                    // training block s - 1; attribute it there. The wait
                    // before block 0 is pipeline startup, not a stall.
                    records[s as usize - 1].timing.stall_ns = waited_ns;
                }
                records.push(StepRecord {
                    trainer: spec.id,
                    epoch: p.epoch,
                    step: p.step,
                    hits: p.hits,
                    misses: p.misses,
                    evicted: p.evicted,
                    replaced: p.replaced,
                    timing,
                });
            }

            let report = producer
                .join()
                .map_err(|e| PipelineError::WorkerPanic(panic_message(e)))??;
            if records.len() != n as usize {
                return Err(PipelineError::WorkerPanic(
                    "prepared-block queue closed before the run finished".into(),
                ));
            }
            Ok((records, report, run_start, last_train_finish))
        },
    )?;

    let mut records = records;
    // The tail preparation may still be running when the last training step
    // finishes; that join wait belongs to the last step's stall.
    let tail_wait = report
        .done_at
        .saturating_duration_since(last_train_finish)
        .as_nanos() as u64;
    if let Some(last) = records.last_mut() {
        last.timing.stall_ns += tail_wait;
    }
    let run_end = if report.done_at > last_train_finish {
        report.done_at
    } else {
        last_train_finish
    };
    Ok(TrainerOutcome {
        records,
        stats: TrainerStats {
            trainer: spec.id,
            partition: spec.partition,
            total_ns: run_end.duration_since(run_start).as_nanos() as u64,
            init_rpc_ns,
            ledger: report.ledger,
            tail_prepare_ns: Some(report.tail_prepare_ns),
            eviction_rounds: report.eviction_rounds,
            eviction_lookup_ns: report.eviction_lookup_ns,
            first_prepare_wall_ns: Some(report.first_prepare_wall_ns),
        },
    })
}
