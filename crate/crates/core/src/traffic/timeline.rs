use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::config::DerivedParams;

use super::matrix::tp_allreduce_per_layer;
use super::TrafficError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    TpBurst,
    PpBurst,
    Off,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentKind::TpBurst => "tp-burst",
            SegmentKind::PpBurst => "pp-burst",
            SegmentKind::Off => "off",
        }
    }

    pub fn is_on(&self) -> bool {
        !matches!(self, SegmentKind::Off)
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
    /// Index of the micro-batch pass this segment belongs to.
    pub block: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Communication activity of one rank over one iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Timeline {
    pub segments: Vec<Segment>,
}

impl Timeline {
    /// Number of distinct passes that carry at least one on-segment.
    pub fn on_blocks(&self) -> usize {
        let mut blocks: Vec<usize> = self.segments.iter().filter(|s| s.kind.is_on()).map(|s| s.block).collect();
        blocks.dedup();
        blocks.len()
    }

    pub fn on_time(&self) -> f64 {
        self.segments.iter().filter(|s| s.kind.is_on()).map(Segment::duration).sum()
    }

    pub fn time_of(&self, kind: SegmentKind) -> f64 {
        self.segments.iter().filter(|s| s.kind == kind).map(Segment::duration).sum()
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Sorted and pairwise non-overlapping.
    pub fn is_well_formed(&self) -> bool {
        self.segments.iter().all(|s| s.end >= s.start)
            && self.segments.windows(2).all(|w| w[0].end <= w[1].start + 1e-12 * w[1].start.abs().max(1.0))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "start_s,end_s,kind")?;
        for s in &self.segments {
            writeln!(out, "{},{},{}", s.start, s.end, s.kind)?;
        }
        Ok(())
    }
}

/// Per-micro-batch durations feeding the On-Off construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDurations {
    pub comp_mb: f64,
    pub tp_mb: f64,
    pub pp_mb: f64,
}

/// Builds the `2m`-block On-Off pattern of one rank.
///
/// Every block (m forward, then m backward) is `layers_per_stage·ops` TP
/// bursts of equal length separated by compute gaps, followed by one PP
/// burst. A block's on-time is `tp_mb + pp_mb` and its off-time `comp_mb`.
/// Zero-length segments are dropped.
pub fn onoff_timeline(
    derived: &DerivedParams,
    durations: BlockDurations,
    recompute: bool,
) -> Result<Timeline, TrafficError> {
    let BlockDurations { comp_mb, tp_mb, pp_mb } = durations;
    if [comp_mb, tp_mb, pp_mb].iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(TrafficError::InvalidDuration);
    }
    let bursts = (derived.layers_per_stage * tp_allreduce_per_layer(recompute)) as usize;
    let burst = tp_mb / bursts as f64;
    let gap = comp_mb / (bursts + 1) as f64;
    let blocks = 2 * derived.micro_batches as usize;

    let mut segments = Vec::with_capacity(blocks * (2 * bursts + 2));
    let mut now = 0.0;
    let mut push = |segments: &mut Vec<Segment>, kind, len: f64, block| {
        if len > 0.0 {
            segments.push(Segment { start: now, end: now + len, kind, block });
            now += len;
        }
    };
    for block in 0..blocks {
        for _ in 0..bursts {
            push(&mut segments, SegmentKind::Off, gap, block);
            push(&mut segments, SegmentKind::TpBurst, burst, block);
        }
        push(&mut segments, SegmentKind::Off, gap, block);
        push(&mut segments, SegmentKind::PpBurst, pp_mb, block);
    }
    Ok(Timeline { segments })
}
