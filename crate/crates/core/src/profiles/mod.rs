//! Effective-bandwidth and GPU-utilization profiles: storage, interpolation,
//! CSV ingestion and the bundled defaults.

mod bandwidth;
mod defaults;
mod utilization;

use thiserror::Error;

use crate::config::Topology;

pub use bandwidth::{ingest_bandwidth, BandwidthProfile, BandwidthRecord, Locality, OpKind, ProfileKey, ANY_SCALE};
pub use defaults::{
    default_bandwidth_profile, default_bandwidth_records, default_utilization_profile, default_utilization_records,
    intra_p2p_peak, intra_saturation_bytes, DEFAULTS_LABEL,
};
pub use utilization::{ingest_utilization, UtilizationProfile, UtilizationRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: bandwidth must be positive, got {value}")]
    NonPositiveBandwidth { row: usize, value: f64 },
    #[error("row {row}: utilization must lie in (0, 1], got {value}")]
    InvalidUtilization { row: usize, value: f64 },
    #[error("no bandwidth profile for {key}")]
    MissingProfileKey { key: ProfileKey },
    #[error("utilization profile is empty")]
    EmptyProfile,
}

impl ProfileError {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileError::MalformedRow { .. } => "MalformedRow",
            ProfileError::NonPositiveBandwidth { .. } => "NonPositiveBandwidth",
            ProfileError::InvalidUtilization { .. } => "InvalidUtilization",
            ProfileError::MissingProfileKey { .. } => "MissingProfileKey",
            ProfileError::EmptyProfile => "EmptyProfile",
        }
    }
}

/// Values for columns a bandwidth log may omit (collective benchmark output
/// usually has neither locality nor topology).
#[derive(Debug, Clone, Copy, Default)]
pub struct ColumnDefaults {
    pub locality: Option<Locality>,
    pub topology: Option<Topology>,
    pub op: Option<OpKind>,
}

/// What a profile CSV holds, decided from its header.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileDocument {
    Bandwidth(Vec<BandwidthRecord>),
    Utilization(Vec<UtilizationRecord>),
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes())
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<T, ProfileError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| ProfileError::MalformedRow { row, reason: format!("missing `{name}`") })?;
    raw.parse::<T>().map_err(|e| ProfileError::MalformedRow { row, reason: format!("`{name}` = `{raw}`: {e}") })
}

/// Sizes may be written as floats by some benchmark tools.
fn size_field(rec: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<u64, ProfileError> {
    let value: f64 = field(rec, idx, name, row)?;
    if value.fract() != 0.0 || value <= 0.0 || value > u64::MAX as f64 {
        return Err(ProfileError::MalformedRow { row, reason: format!("`{name}` must be a positive integer") });
    }
    Ok(value as u64)
}

fn row_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

fn header_error(err: csv::Error) -> ProfileError {
    ProfileError::MalformedRow { row: 1, reason: err.to_string() }
}

/// Parses a bandwidth CSV. Accepts the native header
/// `op,locality,topology,scale,msg_bytes,bw_bytes_per_s` and the aliases
/// `size_bytes`, `busbw_bytes_per_s` and `nranks` used by collective
/// benchmark logs.
pub fn parse_bandwidth_csv(text: &str, defaults: &ColumnDefaults) -> Result<Vec<BandwidthRecord>, ProfileError> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(header_error)?.clone();
    let missing = |name: &str| ProfileError::MalformedRow { row: 1, reason: format!("header lacks `{name}`") };
    let op_col = column(&headers, &["op"]);
    let loc_col = column(&headers, &["locality"]);
    let topo_col = column(&headers, &["topology"]);
    let scale_col = column(&headers, &["scale", "nranks"]).ok_or_else(|| missing("scale"))?;
    let size_col = column(&headers, &["msg_bytes", "size_bytes"]).ok_or_else(|| missing("msg_bytes"))?;
    let bw_col = column(&headers, &["bw_bytes_per_s", "busbw_bytes_per_s"]).ok_or_else(|| missing("bw_bytes_per_s"))?;
    if op_col.is_none() && defaults.op.is_none() {
        return Err(missing("op"));
    }
    if loc_col.is_none() && defaults.locality.is_none() {
        return Err(missing("locality"));
    }
    if topo_col.is_none() && defaults.topology.is_none() {
        return Err(missing("topology"));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ProfileError::MalformedRow { row: i + 2, reason: e.to_string() })?;
        let row = row_of(&rec, i + 2);
        let op = match op_col {
            Some(c) => field(&rec, c, "op", row)?,
            None => defaults.op.expect("checked above"),
        };
        let locality = match loc_col {
            Some(c) => field(&rec, c, "locality", row)?,
            None => defaults.locality.expect("checked above"),
        };
        let topology = match topo_col {
            Some(c) => field(&rec, c, "topology", row)?,
            None => defaults.topology.expect("checked above"),
        };
        let scale: u64 = field(&rec, scale_col, "scale", row)?;
        let msg_bytes = size_field(&rec, size_col, "msg_bytes", row)?;
        let bw_bytes_per_s: f64 = field(&rec, bw_col, "bw_bytes_per_s", row)?;
        if !bw_bytes_per_s.is_finite() || bw_bytes_per_s <= 0.0 {
            return Err(ProfileError::NonPositiveBandwidth { row, value: bw_bytes_per_s });
        }
        out.push(BandwidthRecord { op, locality, topology, scale, msg_bytes, bw_bytes_per_s });
    }
    Ok(out)
}

/// Parses a utilization CSV with header `params_per_gpu,micro_batch,mu`.
pub fn parse_utilization_csv(text: &str) -> Result<Vec<UtilizationRecord>, ProfileError> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(header_error)?.clone();
    let missing = |name: &str| ProfileError::MalformedRow { row: 1, reason: format!("header lacks `{name}`") };
    let size_col = column(&headers, &["params_per_gpu"]).ok_or_else(|| missing("params_per_gpu"))?;
    let b_col = column(&headers, &["micro_batch"]).ok_or_else(|| missing("micro_batch"))?;
    let mu_col = column(&headers, &["mu"]).ok_or_else(|| missing("mu"))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ProfileError::MalformedRow { row: i + 2, reason: e.to_string() })?;
        let row = row_of(&rec, i + 2);
        let mu: f64 = field(&rec, mu_col, "mu", row)?;
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(ProfileError::InvalidUtilization { row, value: mu });
        }
        out.push(UtilizationRecord {
            params_per_gpu: field(&rec, size_col, "params_per_gpu", row)?,
            micro_batch: field(&rec, b_col, "micro_batch", row)?,
            mu,
        });
    }
    Ok(out)
}

/// Parses either kind of profile CSV; a `mu` column marks utilization data.
pub fn parse_profile_csv(text: &str, defaults: &ColumnDefaults) -> Result<ProfileDocument, ProfileError> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(header_error)?;
    if column(headers, &["mu"]).is_some() {
        Ok(ProfileDocument::Utilization(parse_utilization_csv(text)?))
    } else {
        Ok(ProfileDocument::Bandwidth(parse_bandwidth_csv(text, defaults)?))
    }
}

/// Bandwidth and utilization profiles used together by the cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub bandwidth: BandwidthProfile,
    pub utilization: UtilizationProfile,
}

impl ProfileSet {
    pub fn bundled() -> Self {
        Self { bandwidth: default_bandwidth_profile(), utilization: default_utilization_profile() }
    }

    /// Overlays a parsed document: every key it defines replaces the
    /// existing curve or size group.
    pub fn apply(&mut self, doc: ProfileDocument) -> Result<(), ProfileError> {
        match doc {
            ProfileDocument::Bandwidth(records) => self.bandwidth.overlay(&ingest_bandwidth(records)?),
            ProfileDocument::Utilization(records) => self.utilization.overlay(&ingest_utilization(records)?),
        }
        Ok(())
    }
}
