use std::io::{self, Write};

use serde::Serialize;

use super::ProfileError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilizationRecord {
    pub params_per_gpu: f64,
    pub micro_batch: u64,
    pub mu: f64,
}

/// Measured GPU utilization keyed by per-GPU model size and micro-batch.
///
/// Records are grouped by size; each group is sorted by micro-batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtilizationProfile {
    groups: Vec<(f64, Vec<(u64, f64)>)>,
}

/// Validates and deduplicates records (last wins per `(size, b)`).
pub fn ingest_utilization<I>(records: I) -> Result<UtilizationProfile, ProfileError>
where
    I: IntoIterator<Item = UtilizationRecord>,
{
    let mut profile = UtilizationProfile::default();
    for (row, rec) in records.into_iter().enumerate() {
        if !(rec.mu > 0.0 && rec.mu <= 1.0) {
            return Err(ProfileError::InvalidUtilization { row: row + 1, value: rec.mu });
        }
        if !rec.params_per_gpu.is_finite() || rec.params_per_gpu <= 0.0 || rec.micro_batch == 0 {
            return Err(ProfileError::MalformedRow {
                row: row + 1,
                reason: "params_per_gpu and micro_batch must be positive".into(),
            });
        }
        profile.insert(rec);
    }
    Ok(profile)
}

impl UtilizationProfile {
    fn insert(&mut self, rec: UtilizationRecord) {
        let pos = self.groups.partition_point(|(size, _)| *size < rec.params_per_gpu);
        if self.groups.get(pos).is_none_or(|(size, _)| *size != rec.params_per_gpu) {
            self.groups.insert(pos, (rec.params_per_gpu, Vec::new()));
        }
        let samples = &mut self.groups[pos].1;
        match samples.binary_search_by_key(&rec.micro_batch, |&(b, _)| b) {
            Ok(i) => samples[i].1 = rec.mu,
            Err(i) => samples.insert(i, (rec.micro_batch, rec.mu)),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = UtilizationRecord> + '_ {
        self.groups.iter().flat_map(|(size, samples)| {
            samples.iter().map(move |&(b, mu)| UtilizationRecord { params_per_gpu: *size, micro_batch: b, mu })
        })
    }

    /// Replaces every size group that `other` defines.
    pub fn overlay(&mut self, other: &UtilizationProfile) {
        for (size, samples) in &other.groups {
            let pos = self.groups.partition_point(|(s, _)| s < size);
            if self.groups.get(pos).is_some_and(|(s, _)| s == size) {
                self.groups[pos].1 = samples.clone();
            } else {
                self.groups.insert(pos, (*size, samples.clone()));
            }
        }
    }

    /// Picks the size group nearest to `params_per_gpu` in log space (ties go
    /// to the smaller size), then interpolates linearly in `b` and clamps at
    /// the group's ends.
    pub fn lookup(&self, params_per_gpu: f64, micro_batch: u64) -> Result<f64, ProfileError> {
        let target = params_per_gpu.max(f64::MIN_POSITIVE);
        let (_, samples) = self
            .groups
            .iter()
            .min_by(|a, b| {
                let da = (a.0 / target).ln().abs();
                let db = (b.0 / target).ln().abs();
                da.total_cmp(&db)
            })
            .ok_or(ProfileError::EmptyProfile)?;
        let b = micro_batch as f64;
        let (first, last) = (samples[0], samples[samples.len() - 1]);
        if micro_batch <= first.0 {
            return Ok(first.1);
        }
        if micro_batch >= last.0 {
            return Ok(last.1);
        }
        let hi = samples.partition_point(|&(sb, _)| sb < micro_batch);
        let (b1, m1) = samples[hi];
        if b1 == micro_batch {
            return Ok(m1);
        }
        let (b0, m0) = samples[hi - 1];
        let w = (b - b0 as f64) / (b1 - b0) as f64;
        Ok(m0 + w * (m1 - m0))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "params_per_gpu,micro_batch,mu")?;
        for r in self.records() {
            writeln!(out, "{},{},{}", r.params_per_gpu, r.micro_batch, r.mu)?;
        }
        Ok(())
    }
}
