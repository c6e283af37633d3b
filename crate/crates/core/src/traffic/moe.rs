use serde::Serialize;

use crate::config::{ModelKind, ModelSpec};

use super::TrafficError;

/// Byte volumes of one AllToAll between the members of an EP group; entry
/// `(i, j)` is what member `i` sends to member `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllToAllHeatmap {
    n: usize,
    data: Vec<f64>,
}

impl AllToAllHeatmap {
    /// Builds from row-major rows. Rows must have equal length to the number
    /// of rows and carry non-negative entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TrafficError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(TrafficError::NonSquare);
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(TrafficError::NegativeEntry);
        }
        Ok(Self { n, data })
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self { n, data: vec![value; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self { n, data }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.data[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// The three remaining AllToAlls of an expert layer given the first forward
/// one: the combine step reverses the dispatch, and the backward pass
/// replays both with gradients in place of activations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllToAllSequence {
    pub fw2: AllToAllHeatmap,
    pub bw1: AllToAllHeatmap,
    pub bw2: AllToAllHeatmap,
}

pub fn predict_alltoall_sequence(first_fw: &AllToAllHeatmap) -> AllToAllSequence {
    let t = first_fw.transpose();
    AllToAllSequence { fw2: t.clone(), bw1: first_fw.clone(), bw2: t }
}

/// Same as [`predict_alltoall_sequence`] for raw rows.
pub fn predict_alltoall_rows(rows: &[Vec<f64>]) -> Result<AllToAllSequence, TrafficError> {
    Ok(predict_alltoall_sequence(&AllToAllHeatmap::from_rows(rows)?))
}

/// Expected dispatch matrix under uniform expert selection: the total payload
/// `k·prec·g·s·h` is scattered evenly over all `e²` pairs.
pub fn expected_alltoall_matrix(model: &ModelSpec, e: u64, k_active: u64) -> Result<AllToAllHeatmap, TrafficError> {
    if model.kind != ModelKind::Moe {
        return Err(TrafficError::NotMoeModel);
    }
    if e == 0 {
        return Err(TrafficError::InvalidExpertParallel);
    }
    if k_active == 0 || k_active > model.moe_top_k_max {
        return Err(TrafficError::InvalidKActive { k_active, max: model.moe_top_k_max });
    }
    let payload = (k_active * model.precision_bytes * model.global_batch * model.seq_len * model.hidden) as f64;
    let n = e as usize;
    Ok(AllToAllHeatmap::uniform(n, payload / (e * e) as f64))
}

/// Population mean and variance over all pairs. Deviations are taken from
/// the first entry, so a constant matrix has a variance of exactly zero.
pub fn uniformity_metrics(heatmap: &AllToAllHeatmap) -> (f64, f64) {
    let count = heatmap.data.len() as f64;
    let shift = heatmap.data.first().copied().unwrap_or(0.0);
    let mean_dev = heatmap.data.iter().map(|x| x - shift).sum::<f64>() / count;
    let var = heatmap.data.iter().map(|x| (x - shift - mean_dev).powi(2)).sum::<f64>() / count;
    (shift + mean_dev, var)
}
