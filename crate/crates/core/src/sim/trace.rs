use serde::Serialize;
use serde_json::json;

use crate::traffic::SegmentKind;

use super::{Pass, SimResult};

/// A complete ("X") event of the Chrome trace format; times in µs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub name: String,
    pub ph: &'static str,
    pub ts: f64,
    pub dur: f64,
    pub pid: usize,
    pub tid: usize,
}

const US: f64 = 1e6;

/// Renders every simulated segment as a trace event: `pid` is the stage,
/// `tid` the model chunk. `provenance` lands in `otherData`.
pub fn chrome_trace(result: &SimResult, provenance: &str) -> serde_json::Value {
    let mut events = Vec::new();
    for (stage, tl) in result.timelines.iter().enumerate() {
        let stage_ops: Vec<_> = result.ops.iter().filter(|o| o.stage == stage).collect();
        for seg in &tl.segments {
            let op = stage_ops[seg.block].op;
            let pass = match op.pass {
                Pass::Forward => "F",
                Pass::Backward => "B",
            };
            let name = match seg.kind {
                SegmentKind::Off => format!("{pass}{}", op.micro_batch),
                kind => format!("{kind} {pass}{}", op.micro_batch),
            };
            events.push(TraceEvent {
                name,
                ph: "X",
                ts: seg.start * US,
                dur: seg.duration() * US,
                pid: stage,
                tid: op.chunk,
            });
        }
    }
    json!({
        "traceEvents": events,
        "displayTimeUnit": "ms",
        "otherData": { "provenance": provenance },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{simulate, SimInput};
    use super::*;

    #[test]
    fn events_cover_every_segment() {
        let input = SimInput { tp_fwd: 0.1, tp_bwd: 0.2, pp_hop: 0.05, ..SimInput::uniform(2, 2, 1, 1.0) };
        let r = simulate(&input).unwrap();
        let trace = chrome_trace(&r, "test");
        let events = trace["traceEvents"].as_array().unwrap();
        let segments: usize = r.timelines.iter().map(|t| t.segments.len()).sum();
        assert_eq!(events.len(), segments);
        assert_eq!(events[0]["ph"], "X");
        assert_eq!(events[0]["name"], "F0");
        assert_eq!(trace["otherData"]["provenance"], "test");
        assert!(events.iter().all(|e| e["pid"].as_u64().unwrap() < 2 && e["tid"] == 0));
    }
}
