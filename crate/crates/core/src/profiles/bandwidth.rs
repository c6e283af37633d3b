use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::config::Topology;

use super::ProfileError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    P2p,
    Allreduce,
    Alltoall,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::P2p => "p2p",
            OpKind::Allreduce => "allreduce",
            OpKind::Alltoall => "alltoall",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "p2p" | "sendrecv" => Ok(OpKind::P2p),
            "allreduce" => Ok(OpKind::Allreduce),
            "alltoall" => Ok(OpKind::Alltoall),
            other => Err(format!("unknown op `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Intra,
    Inter,
}

impl Locality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Locality::Intra => "intra",
            Locality::Inter => "inter",
        }
    }
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Locality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intra" | "intra-node" | "intranode" => Ok(Locality::Intra),
            "inter" | "inter-node" | "internode" => Ok(Locality::Inter),
            other => Err(format!("unknown locality `{other}`")),
        }
    }
}

/// Scale value that matches any group size without an exact entry.
pub const ANY_SCALE: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ProfileKey {
    pub op: OpKind,
    pub locality: Locality,
    pub topology: Topology,
    pub scale: u64,
}

impl fmt::Display for ProfileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/scale={}", self.op, self.locality, self.topology, self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthRecord {
    pub op: OpKind,
    pub locality: Locality,
    pub topology: Topology,
    pub scale: u64,
    pub msg_bytes: u64,
    pub bw_bytes_per_s: f64,
}

impl BandwidthRecord {
    pub fn key(&self) -> ProfileKey {
        ProfileKey { op: self.op, locality: self.locality, topology: self.topology, scale: self.scale }
    }
}

/// Message-size to effective-bandwidth curves keyed by operation, locality,
/// topology and group scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BandwidthProfile {
    curves: BTreeMap<ProfileKey, Vec<(u64, f64)>>,
}

/// Validates and deduplicates records. For a repeated `(key, msg_bytes)` the
/// last record wins.
pub fn ingest_bandwidth<I>(records: I) -> Result<BandwidthProfile, ProfileError>
where
    I: IntoIterator<Item = BandwidthRecord>,
{
    let mut staged: BTreeMap<ProfileKey, BTreeMap<u64, f64>> = BTreeMap::new();
    for (row, rec) in records.into_iter().enumerate() {
        if !rec.bw_bytes_per_s.is_finite() || rec.bw_bytes_per_s <= 0.0 {
            return Err(ProfileError::NonPositiveBandwidth { row: row + 1, value: rec.bw_bytes_per_s });
        }
        if rec.msg_bytes == 0 {
            return Err(ProfileError::MalformedRow { row: row + 1, reason: "msg_bytes must be positive".into() });
        }
        staged.entry(rec.key()).or_default().insert(rec.msg_bytes, rec.bw_bytes_per_s);
    }
    Ok(BandwidthProfile { curves: staged.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect() })
}

impl BandwidthProfile {
    /// Number of stored `(key, size)` samples.
    pub fn len(&self) -> usize {
        self.curves.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ProfileKey> {
        self.curves.keys()
    }

    pub fn curve(&self, key: &ProfileKey) -> Option<&[(u64, f64)]> {
        self.curves.get(key).map(Vec::as_slice)
    }

    pub fn records(&self) -> impl Iterator<Item = BandwidthRecord> + '_ {
        self.curves.iter().flat_map(|(k, curve)| {
            curve.iter().map(move |&(msg_bytes, bw)| BandwidthRecord {
                op: k.op,
                locality: k.locality,
                topology: k.topology,
                scale: k.scale,
                msg_bytes,
                bw_bytes_per_s: bw,
            })
        })
    }

    /// Replaces whole curves with those of `other` for every key it defines.
    pub fn overlay(&mut self, other: &BandwidthProfile) {
        for (k, v) in &other.curves {
            self.curves.insert(*k, v.clone());
        }
    }

    /// Effective bandwidth for a message of `msg_bytes`.
    ///
    /// An exact scale entry is preferred; otherwise a curve stored under
    /// [`ANY_SCALE`] is used. Between knots the value is linear in
    /// `log2(msg_bytes)`; outside the sampled range it is clamped.
    pub fn lookup(
        &self,
        op: OpKind,
        locality: Locality,
        topology: Topology,
        scale: u64,
        msg_bytes: f64,
    ) -> Result<f64, ProfileError> {
        let exact = ProfileKey { op, locality, topology, scale };
        let wildcard = ProfileKey { scale: ANY_SCALE, ..exact };
        let curve = self
            .curves
            .get(&exact)
            .or_else(|| self.curves.get(&wildcard))
            .ok_or(ProfileError::MissingProfileKey { key: exact })?;
        Ok(interpolate(curve, msg_bytes))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "op,locality,topology,scale,msg_bytes,bw_bytes_per_s")?;
        for r in self.records() {
            writeln!(out, "{},{},{},{},{},{}", r.op, r.locality, r.topology, r.scale, r.msg_bytes, r.bw_bytes_per_s)?;
        }
        Ok(())
    }
}

fn interpolate(curve: &[(u64, f64)], msg_bytes: f64) -> f64 {
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    if msg_bytes <= first.0 as f64 {
        return first.1;
    }
    if msg_bytes >= last.0 as f64 {
        return last.1;
    }
    let x = msg_bytes.log2();
    let hi = curve.partition_point(|&(size, _)| (size as f64) < msg_bytes);
    let (s1, b1) = curve[hi];
    if s1 as f64 == msg_bytes {
        return b1;
    }
    let (s0, b0) = curve[hi - 1];
    let (x0, x1) = ((s0 as f64).log2(), (s1 as f64).log2());
    let w = (x - x0) / (x1 - x0);
    b0 + w * (b1 - b0)
}
