//! Bundled reference profiles.
//!
//! These are coarse, illustrative curves assembled from published reference
//! numbers (intra-node P2P maxima, AllReduce bus-bandwidth plateaus and their
//! saturation message sizes, per-GPU NIC capacity). They let the tool run
//! out of the box; ingest measured profiles for real predictions.

use crate::config::Topology;

use super::bandwidth::{ingest_bandwidth, BandwidthProfile, BandwidthRecord, Locality, OpKind, ANY_SCALE};
use super::utilization::{ingest_utilization, UtilizationProfile, UtilizationRecord};

pub const DEFAULTS_LABEL: &str = "illustrative reference defaults";

const GBPS: f64 = 1e9 / 8.0;
const GB: f64 = 1e9;
const MB: u64 = 1_000_000;
const SMALL_MSG: u64 = 4096;

/// Message size at which intra-node curves reach their plateau.
pub fn intra_saturation_bytes(topology: Topology) -> u64 {
    match topology {
        Topology::Pcie => 2 * MB,
        Topology::Nvlink => 16 * MB,
        Topology::Nvswitch => 128 * MB,
    }
}

/// Highest unidirectional intra-node P2P bandwidth.
pub fn intra_p2p_peak(topology: Topology) -> f64 {
    match topology {
        Topology::Pcie => 13.2 * GB,
        Topology::Nvlink => 48.4 * GB,
        Topology::Nvswitch => 174.0 * GB,
    }
}

/// AllReduce bus-bandwidth plateau; `scale` only matters on NVLink, where
/// smaller groups use fewer rings.
fn intra_collective_peak(topology: Topology, scale: u64) -> f64 {
    match (topology, scale) {
        (Topology::Pcie, _) => 50.0 * GBPS,
        (Topology::Nvlink, 2) => 500.0 * GBPS,
        (Topology::Nvlink, 3) => 1000.0 / 3.0 * GBPS,
        (Topology::Nvlink, _) => 1000.0 * GBPS,
        (Topology::Nvswitch, _) => 1500.0 * GBPS,
    }
}

/// Effective per-GPU inter-node bandwidth of the platform class that uses
/// each intra-node topology.
fn inter_peak(topology: Topology) -> f64 {
    match topology {
        Topology::Pcie => 90.0 * GBPS,
        Topology::Nvlink => 180.0 * GBPS,
        Topology::Nvswitch => 360.0 * GBPS,
    }
}

fn curve(
    op: OpKind,
    locality: Locality,
    topology: Topology,
    scale: u64,
    low: f64,
    knee: u64,
    peak: f64,
) -> [BandwidthRecord; 2] {
    let rec = |msg_bytes, bw_bytes_per_s| BandwidthRecord { op, locality, topology, scale, msg_bytes, bw_bytes_per_s };
    [rec(SMALL_MSG, low), rec(knee, peak)]
}

pub fn default_bandwidth_records() -> Vec<BandwidthRecord> {
    let mut out = Vec::new();
    for topology in Topology::ALL {
        let knee = intra_saturation_bytes(topology);
        out.extend(curve(OpKind::P2p, Locality::Intra, topology, ANY_SCALE, 0.4 * GB, knee, intra_p2p_peak(topology)));
        let scales: &[u64] = if topology == Topology::Nvlink { &[ANY_SCALE, 2, 3] } else { &[ANY_SCALE] };
        for &scale in scales {
            let peak = intra_collective_peak(topology, scale);
            for op in [OpKind::Allreduce, OpKind::Alltoall] {
                out.extend(curve(op, Locality::Intra, topology, scale, 0.2 * GB, knee, peak));
            }
        }
        for op in [OpKind::P2p, OpKind::Allreduce, OpKind::Alltoall] {
            out.extend(curve(op, Locality::Inter, topology, ANY_SCALE, 0.1 * GB, 64 * MB, inter_peak(topology)));
        }
    }
    out
}

pub fn default_bandwidth_profile() -> BandwidthProfile {
    ingest_bandwidth(default_bandwidth_records()).expect("bundled bandwidth defaults are valid")
}

const UTIL_SIZES: [f64; 5] = [0.5e9, 1.0e9, 2.4e9, 5.0e9, 10.0e9];
const UTIL_BATCHES: [u64; 11] = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48];

/// Saturating utilization curve: rises with micro-batch and with per-GPU
/// size, rounded to four decimals.
fn synthetic_mu(size: f64, b: u64) -> f64 {
    let ceiling = (0.45 + 0.05 * (size / 0.5e9).log2()).min(0.7);
    let b = b as f64;
    (ceiling * b / (b + 0.6) * 1e4).round() / 1e4
}

pub fn default_utilization_records() -> Vec<UtilizationRecord> {
    UTIL_SIZES
        .iter()
        .flat_map(|&size| {
            UTIL_BATCHES.iter().map(move |&b| UtilizationRecord {
                params_per_gpu: size,
                micro_batch: b,
                mu: synthetic_mu(size, b),
            })
        })
        .collect()
}

pub fn default_utilization_profile() -> UtilizationProfile {
    ingest_utilization(default_utilization_records()).expect("bundled utilization defaults are valid")
}
