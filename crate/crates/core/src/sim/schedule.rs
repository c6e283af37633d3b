//! Per-stage operation orders of 1F1B and interleaved 1F1B.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pass {
    Forward,
    Backward,
}

/// One unit of work on a stage: a pass of one micro-batch through one model
/// chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Op {
    pub pass: Pass,
    pub micro_batch: usize,
    pub chunk: usize,
}

/// Micro-batch and chunk of the `k`-th forward (or backward) on a stage.
/// Micro-batches advance in groups of `p`; each group runs through all
/// chunks before the next group starts. Backwards visit chunks in reverse.
fn virtual_op(k: usize, p: usize, v: usize, pass: Pass) -> Op {
    let group = k / (p * v);
    let within = k % (p * v);
    let chunk_fwd = within / p;
    let chunk = match pass {
        Pass::Forward => chunk_fwd,
        Pass::Backward => v - 1 - chunk_fwd,
    };
    Op { pass, micro_batch: group * p + within % p, chunk }
}

/// Operation order of stage `stage` (0-based).
///
/// Warmup forwards, then strict forward/backward alternation, then the
/// remaining backwards. With `v = 1` the warmup is `p - stage - 1`; with
/// interleaving it is `2(p - stage - 1) + (v - 1)p`, capped at `m·v`.
pub fn stage_order(stage: usize, p: usize, m: usize, v: usize) -> Vec<Op> {
    let total = m * v;
    let warmup = if v == 1 { (p - stage - 1).min(m) } else { ((p - stage - 1) * 2 + (v - 1) * p).min(total) };
    let op = |k, pass| {
        if v == 1 {
            Op { pass, micro_batch: k, chunk: 0 }
        } else {
            virtual_op(k, p, v, pass)
        }
    };
    let mut order = Vec::with_capacity(2 * total);
    order.extend((0..warmup).map(|k| op(k, Pass::Forward)));
    for i in 0..total - warmup {
        order.push(op(warmup + i, Pass::Forward));
        order.push(op(i, Pass::Backward));
    }
    order.extend((total - warmup..total).map(|k| op(k, Pass::Backward)));
    order
}
