//! Discrete-event simulation of 1F1B and interleaved-1F1B pipelines.
//!
//! Each stage executes a fixed operation order. An operation may start once
//! the stage is free and its upstream activation (or gradient) has been
//! sent. Communication blocks the stage that performs it: a receive is a PP
//! burst on the receiver, TP AllReduce follows compute, and a send is a PP
//! burst on the sender.

mod schedule;
mod trace;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::cost::CostBreakdown;
use crate::traffic::{Segment, SegmentKind, Timeline};

pub use schedule::{stage_order, Op, Pass};
pub use trace::{chrome_trace, TraceEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator input: {0}")]
    InvalidInput(String),
    #[error("interleaved schedule needs micro-batches ({m}) to be a multiple of stages ({p})")]
    InterleaveNeedsDivisibleMicroBatches { m: usize, p: usize },
    #[error("schedule deadlocked after {done} of {total} operations")]
    Deadlock { done: usize, total: usize },
}

impl SimError {
    pub fn name(&self) -> &'static str {
        match self {
            SimError::InvalidInput(_) => "InvalidSimInput",
            SimError::InterleaveNeedsDivisibleMicroBatches { .. } => "InterleaveNeedsDivisibleMicroBatches",
            SimError::Deadlock { .. } => "Deadlock",
        }
    }
}

/// Default backward:forward compute ratio: the backward pass carries its
/// own four FLOPs per parameter-token plus the two of recomputation, against
/// two for the forward.
pub const DEFAULT_BWD_FWD_RATIO: f64 = 3.0;

/// Durations are per micro-batch for a whole stage; with `v` chunks each
/// chunk takes `1/v` of them. `pp_hop` is one transfer across one stage
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimInput {
    pub p: usize,
    pub m: usize,
    pub v: usize,
    pub fwd: f64,
    pub bwd: f64,
    pub tp_fwd: f64,
    pub tp_bwd: f64,
    pub pp_hop: f64,
}

impl SimInput {
    /// Compute-only input with the default backward:forward ratio.
    pub fn uniform(p: usize, m: usize, v: usize, fwd: f64) -> Self {
        Self { p, m, v, fwd, bwd: fwd * DEFAULT_BWD_FWD_RATIO, tp_fwd: 0.0, tp_bwd: 0.0, pp_hop: 0.0 }
    }

    /// Splits cost-model micro-batch times into passes. With recomputation
    /// compute splits 1:3 and TP AllReduce 1:2 (two forward, four in
    /// recompute plus backward); without it 1:2 and 1:1.
    pub fn from_breakdown(p: usize, m: usize, v: usize, c: &CostBreakdown, recompute: bool) -> Self {
        let (comp_ratio, tp_ratio) = if recompute { (DEFAULT_BWD_FWD_RATIO, 2.0) } else { (2.0, 1.0) };
        Self {
            p,
            m,
            v,
            fwd: c.t_comp_mb / (1.0 + comp_ratio),
            bwd: c.t_comp_mb * comp_ratio / (1.0 + comp_ratio),
            tp_fwd: c.t_tp_mb / (1.0 + tp_ratio),
            tp_bwd: c.t_tp_mb * tp_ratio / (1.0 + tp_ratio),
            pp_hop: if p > 1 { c.t_pp_mb / (2.0 * v as f64) } else { 0.0 },
        }
    }

    fn check(&self) -> Result<(), SimError> {
        if self.p == 0 || self.m == 0 || self.v == 0 {
            return Err(SimError::InvalidInput("p, m and v must be at least 1".into()));
        }
        for (name, d) in [
            ("fwd", self.fwd),
            ("bwd", self.bwd),
            ("tp_fwd", self.tp_fwd),
            ("tp_bwd", self.tp_bwd),
            ("pp_hop", self.pp_hop),
        ] {
            if !d.is_finite() || d < 0.0 {
                return Err(SimError::InvalidInput(format!("{name} must be finite and non-negative")));
            }
        }
        if self.v > 1 && !self.m.is_multiple_of(self.p) {
            return Err(SimError::InterleaveNeedsDivisibleMicroBatches { m: self.m, p: self.p });
        }
        Ok(())
    }
}

/// One executed operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutedOp {
    pub stage: usize,
    pub op: Op,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Completion of the last backward on the first stage.
    pub iteration_time: f64,
    /// Idle share of the first stage over the iteration.
    pub bubble_ratio: f64,
    pub idle_time: f64,
    /// Per-stage activity; compute is recorded as `off`.
    pub timelines: Vec<Timeline>,
    pub ops: Vec<ExecutedOp>,
}

/// Runs the schedule selected by `input.v`.
pub fn simulate(input: &SimInput) -> Result<SimResult, SimError> {
    input.check()?;
    let SimInput { p, m, v, .. } = *input;
    let vf = v as f64;
    let virtual_stages = p * v;
    let orders: Vec<Vec<Op>> = (0..p).map(|s| stage_order(s, p, m, v)).collect();
    let total: usize = orders.iter().map(Vec::len).sum();

    let mut next = vec![0usize; p];
    let mut free = vec![0.0f64; p];
    let mut timelines = vec![Timeline::default(); p];
    let mut ops = Vec::with_capacity(total);
    // Time at which an op's output starts leaving its stage, keyed by
    // (pass, micro-batch, virtual stage).
    let mut sent: HashMap<(Pass, usize, usize), f64> = HashMap::with_capacity(total);

    let upstream = |op: &Op, stage: usize| -> Option<usize> {
        let vs = op.chunk * p + stage;
        match op.pass {
            Pass::Forward => vs.checked_sub(1),
            Pass::Backward => (vs + 1 < virtual_stages).then_some(vs + 1),
        }
    };

    for _ in 0..total {
        // Ready candidates; the earliest start wins, then the lower stage,
        // then the lower micro-batch.
        let mut best: Option<(f64, usize, usize, Option<f64>)> = None;
        for stage in 0..p {
            let Some(op) = orders[stage].get(next[stage]) else { continue };
            let dep = match upstream(op, stage) {
                Some(up) => match sent.get(&(op.pass, op.micro_batch, up)) {
                    Some(&t) => Some(t),
                    None => continue,
                },
                None => None,
            };
            let start = dep.map_or(free[stage], |t| t.max(free[stage]));
            let key = (start, stage, op.micro_batch);
            if best.is_none_or(|(bs, bst, bmb, _)| (key.0, key.1, key.2) < (bs, bst, bmb)) {
                best = Some((start, stage, op.micro_batch, dep));
            }
        }
        let Some((start, stage, _, dep)) = best else {
            return Err(SimError::Deadlock { done: ops.len(), total });
        };
        let op = orders[stage][next[stage]];
        let block = next[stage];
        next[stage] += 1;

        let (comp, tp) = match op.pass {
            Pass::Forward => (input.fwd / vf, input.tp_fwd / vf),
            Pass::Backward => (input.bwd / vf, input.tp_bwd / vf),
        };
        let vs = op.chunk * p + stage;
        let has_downstream = match op.pass {
            Pass::Forward => vs + 1 < virtual_stages,
            Pass::Backward => vs > 0,
        };
        let tl = &mut timelines[stage];
        let mut now = start;
        let mut push = |kind, len: f64, now: &mut f64| {
            if len > 0.0 {
                tl.segments.push(Segment { start: *now, end: *now + len, kind, block });
                *now += len;
            }
        };
        if dep.is_some() {
            push(SegmentKind::PpBurst, input.pp_hop, &mut now);
        }
        push(SegmentKind::Off, comp, &mut now);
        push(SegmentKind::TpBurst, tp, &mut now);
        sent.insert((op.pass, op.micro_batch, vs), now);
        if has_downstream {
            push(SegmentKind::PpBurst, input.pp_hop, &mut now);
        }
        free[stage] = now;
        ops.push(ExecutedOp { stage, op, start, end: now });
    }

    let iteration_time = free[0];
    let busy: f64 = timelines[0].segments.iter().map(Segment::duration).sum();
    let idle_time = (iteration_time - busy).max(0.0);
    let bubble_ratio = if iteration_time > 0.0 { idle_time / iteration_time } else { 0.0 };
    Ok(SimResult { iteration_time, bubble_ratio, idle_time, timelines, ops })
}

/// [`simulate`] for inputs with `v > 1`.
pub fn simulate_interleaved(input: &SimInput) -> Result<SimResult, SimError> {
    if input.v < 2 {
        return Err(SimError::InvalidInput("interleaved simulation needs v >= 2".into()));
    }
    simulate(input)
}
