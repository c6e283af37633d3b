//! Rank placement, per-iteration traffic matrices, On-Off timelines and
//! MoE AllToAll predictions.

mod mapping;
mod matrix;
mod moe;
mod ring;
mod timeline;

use thiserror::Error;

pub use mapping::{map_ranks, RankInfo, RankMapping, Span};
pub use matrix::{
    alltoall_per_expert_layer, build_traffic_matrix, build_traffic_matrix_with, expert_layers_per_stage,
    tp_allreduce_per_layer, TrafficClass, TrafficMatrix, TrafficOptions,
};
pub use moe::{
    expected_alltoall_matrix, predict_alltoall_rows, predict_alltoall_sequence, uniformity_metrics, AllToAllHeatmap,
    AllToAllSequence,
};
pub use ring::{chunk_sizes, CollectiveRenderer, RingAllReduce};
pub use timeline::{onoff_timeline, BlockDurations, Segment, SegmentKind, Timeline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("parallel layout needs {required} GPUs but the platform has {available}")]
    GpuCountMismatch { required: u64, available: u64 },
    #[error("TP degree {tp} exceeds {gpus_per_machine} GPUs per machine")]
    UnmappableTpGroup { tp: u64, gpus_per_machine: u64 },
    #[error("rank mapping does not match the parallel layout")]
    MappingMismatch,
    #[error("AllToAll matrix must be square and non-empty")]
    NonSquare,
    #[error("AllToAll matrix entries must be finite and non-negative")]
    NegativeEntry,
    #[error("AllToAll traffic requires a MoE model")]
    NotMoeModel,
    #[error("expert-parallel degree must be at least 1")]
    InvalidExpertParallel,
    #[error("k_active {k_active} outside 1..={max}")]
    InvalidKActive { k_active: u64, max: u64 },
    #[error("timeline durations must be finite and non-negative")]
    InvalidDuration,
}

impl TrafficError {
    pub fn name(&self) -> &'static str {
        match self {
            TrafficError::GpuCountMismatch { .. } => "GpuCountMismatch",
            TrafficError::UnmappableTpGroup { .. } => "UnmappableTpGroup",
            TrafficError::MappingMismatch => "MappingMismatch",
            TrafficError::NonSquare => "NonSquare",
            TrafficError::NegativeEntry => "NegativeEntry",
            TrafficError::NotMoeModel => "NotMoeModel",
            TrafficError::InvalidExpertParallel => "InvalidExpertParallel",
            TrafficError::InvalidKActive { .. } => "InvalidKActive",
            TrafficError::InvalidDuration => "InvalidDuration",
        }
    }
}
