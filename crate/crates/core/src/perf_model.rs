//! Closed-form step-time model for the baseline and overlapped pipelines.
//!
//! Two layers: continuous formulas over f64 seconds for prediction and
//! what-if analysis, and exact integer-nanosecond evaluations over recorded
//! per-step component times that must reproduce the engine's virtual-clock
//! totals bit for bit.

use thiserror::Error;

use crate::metrics::StepTiming;

#[derive(Debug, Error, PartialEq)]
pub enum PerfModelError {
    #[error("step count must be at least 1")]
    NoSteps,
    #[error("training time must be positive")]
    ZeroTrainTime,
    #[error("inputs must be finite and non-negative")]
    NegativeInput,
}

/// Average per-step phase durations, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentTimes {
    pub sampling_s: f64,
    pub lookup_s: f64,
    pub scoring_s: f64,
    pub rpc_s: f64,
    pub copy_s: f64,
    pub ddp_s: f64,
}

impl ComponentTimes {
    fn validate(&self) -> Result<(), PerfModelError> {
        for v in [
            self.sampling_s,
            self.lookup_s,
            self.scoring_s,
            self.rpc_s,
            self.copy_s,
            self.ddp_s,
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(PerfModelError::NegativeInput);
            }
        }
        Ok(())
    }
}

/// Unoverlapped step: sample, transfer (RPC and local copy overlap each
/// other), then train.
pub fn baseline_step_time(ct: &ComponentTimes) -> f64 {
    ct.sampling_s + ct.rpc_s.max(ct.copy_s) + ct.ddp_s
}

/// Preparation phase of the overlapped pipeline: sample, probe the buffer,
/// then scoring overlaps the transfer.
pub fn prepare_time(ct: &ComponentTimes) -> f64 {
    ct.sampling_s + ct.lookup_s + ct.scoring_s.max(ct.rpc_s.max(ct.copy_s))
}

/// Total for `n_steps` overlapped steps with constant per-step costs: the
/// first preparation is exposed, then every training step runs concurrently
/// with the next preparation, so each of the `n_steps` terms costs
/// max(prepare, train).
pub fn prefetch_total(
    first: &ComponentTimes,
    steady: &ComponentTimes,
    n_steps: u64,
) -> Result<f64, PerfModelError> {
    if n_steps < 1 {
        return Err(PerfModelError::NoSteps);
    }
    first.validate()?;
    steady.validate()?;
    let steady_prepare = prepare_time(steady);
    Ok(prepare_time(first)
        + steady_prepare.max(first.ddp_s)
        + (n_steps - 1) as f64 * steady_prepare.max(steady.ddp_s))
}

/// Predicted speedup of the overlapped pipeline over baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementFactor {
    /// (sampling + max(rpc, copy)) / train + 1.
    pub full: f64,
    /// rpc / train + 1: transfer-dominated approximation.
    pub simplified: f64,
}

/// Steady-state improvement when preparation hides entirely behind training.
pub fn improvement_factor(ct: &ComponentTimes) -> Result<ImprovementFactor, PerfModelError> {
    ct.validate()?;
    if ct.ddp_s <= 0.0 {
        return Err(PerfModelError::ZeroTrainTime);
    }
    Ok(ImprovementFactor {
        full: (ct.sampling_s + ct.rpc_s.max(ct.copy_s)) / ct.ddp_s + 1.0,
        simplified: ct.rpc_s / ct.ddp_s + 1.0,
    })
}

/// Compounded preparation-cost estimate when scoring adds `scoring_pct`
/// percent per eviction interval, over `n_intervals` intervals.
pub fn scoring_overhead(
    prepare_present: f64,
    scoring_pct: f64,
    n_intervals: u32,
) -> Result<f64, PerfModelError> {
    if !prepare_present.is_finite()
        || prepare_present < 0.0
        || !scoring_pct.is_finite()
        || scoring_pct < 0.0
    {
        return Err(PerfModelError::NegativeInput);
    }
    Ok(prepare_present * (1.0 + scoring_pct / 100.0).powi(n_intervals as i32))
}

/// Exact baseline total over recorded steps, on the integer-ns clock.
pub fn baseline_total_ns(steps: &[StepTiming]) -> u64 {
    steps
        .iter()
        .map(|t| t.sampling_ns + t.rpc_ns.max(t.copy_ns) + t.ddp_ns)
        .sum()
}

/// Exact overlapped total over recorded steps. `tail_prepare_ns` is the
/// preparation that overlaps the final training step (the pipeline always
/// works one block ahead). Evaluates
/// `prepare(0) + sum_s max(prepare(s + 1), ddp(s))`.
pub fn prefetch_total_ns(steps: &[StepTiming], tail_prepare_ns: u64) -> Result<u64, PerfModelError> {
    if steps.is_empty() {
        return Err(PerfModelError::NoSteps);
    }
    let mut total = steps[0].prepare_ns;
    for (s, t) in steps.iter().enumerate() {
        let next_prepare = steps
            .get(s + 1)
            .map(|n| n.prepare_ns)
            .unwrap_or(tail_prepare_ns);
        total += next_prepare.max(t.ddp_ns);
    }
    Ok(total)
}
