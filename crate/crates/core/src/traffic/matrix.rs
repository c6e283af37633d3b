use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::config::{DerivedParams, ModelKind, ModelSpec, ParallelismConfig};

use super::mapping::RankMapping;
use super::moe::expected_alltoall_matrix;
use super::ring::{CollectiveRenderer, RingAllReduce};
use super::TrafficError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TrafficClass {
    Tp,
    Pp,
    Dp,
    EmbSync,
    Ata,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] =
        [TrafficClass::Tp, TrafficClass::Pp, TrafficClass::Dp, TrafficClass::EmbSync, TrafficClass::Ata];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrafficClass::Tp => "tp",
            TrafficClass::Pp => "pp",
            TrafficClass::Dp => "dp",
            TrafficClass::EmbSync => "embsync",
            TrafficClass::Ata => "ata",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knobs for matrix construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficOptions {
    /// Six TP AllReduce per layer and micro-batch with recomputation, four
    /// without.
    pub recompute: bool,
    /// Experts per token for MoE; `None` means `moe_top_k_max`.
    pub k_active: Option<u64>,
}

impl Default for TrafficOptions {
    fn default() -> Self {
        Self { recompute: true, k_active: None }
    }
}

/// TP AllReduce operations per layer and micro-batch.
pub fn tp_allreduce_per_layer(recompute: bool) -> u64 {
    if recompute {
        6
    } else {
        4
    }
}

/// AllToAll operations per expert layer and iteration.
pub fn alltoall_per_expert_layer(recompute: bool) -> u64 {
    if recompute {
        6
    } else {
        4
    }
}

/// Per-iteration, per-class directed byte volumes between all rank pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    n: usize,
    classes: [BTreeMap<(usize, usize), u64>; 5],
}

impl TrafficMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, classes: Default::default() }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub(crate) fn add(&mut self, class: TrafficClass, src: usize, dst: usize, bytes: u64) {
        debug_assert!(src != dst, "self traffic is not recorded");
        if bytes == 0 || src == dst {
            return;
        }
        *self.classes[class.index()].entry((src, dst)).or_insert(0) += bytes;
    }

    pub fn get(&self, class: TrafficClass, src: usize, dst: usize) -> u64 {
        self.classes[class.index()].get(&(src, dst)).copied().unwrap_or(0)
    }

    /// Sum over classes for one directed pair.
    pub fn pair_total(&self, src: usize, dst: usize) -> u64 {
        TrafficClass::ALL.iter().map(|&c| self.get(c, src, dst)).sum()
    }

    /// Nonzero entries of a class in `(src, dst)` order.
    pub fn entries(&self, class: TrafficClass) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.classes[class.index()].iter().map(|(&k, &v)| (k, v))
    }

    pub fn nonzero_count(&self, class: TrafficClass) -> usize {
        self.classes[class.index()].len()
    }

    pub fn class_total(&self, class: TrafficClass) -> u64 {
        self.classes[class.index()].values().sum()
    }

    pub fn total(&self) -> u64 {
        TrafficClass::ALL.iter().map(|&c| self.class_total(c)).sum()
    }

    /// Fraction of all bytes carried by `class`.
    pub fn share(&self, class: TrafficClass) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.class_total(class) as f64 / total as f64
        }
    }

    /// Dense `n×n` CSV with a header row and a leading column of global ranks.
    pub fn write_class_csv<W: Write>(&self, class: TrafficClass, out: &mut W) -> io::Result<()> {
        write!(out, "rank")?;
        for dst in 0..self.n {
            write!(out, ",{dst}")?;
        }
        writeln!(out)?;
        for src in 0..self.n {
            write!(out, "{src}")?;
            for dst in 0..self.n {
                write!(out, ",{}", self.get(class, src, dst))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Builds the per-iteration communication matrix with ring rendering.
pub fn build_traffic_matrix(
    model: &ModelSpec,
    par: &ParallelismConfig,
    derived: &DerivedParams,
    mapping: &RankMapping,
    opts: &TrafficOptions,
) -> Result<TrafficMatrix, TrafficError> {
    build_traffic_matrix_with(model, par, derived, mapping, opts, &RingAllReduce)
}

/// Same as [`build_traffic_matrix`] with a caller-supplied collective
/// renderer.
pub fn build_traffic_matrix_with(
    model: &ModelSpec,
    par: &ParallelismConfig,
    derived: &DerivedParams,
    mapping: &RankMapping,
    opts: &TrafficOptions,
    renderer: &dyn CollectiveRenderer,
) -> Result<TrafficMatrix, TrafficError> {
    if mapping.pp as u64 != par.pp || mapping.tp as u64 != par.tp || mapping.dp as u64 != par.dp {
        return Err(TrafficError::MappingMismatch);
    }
    let mut matrix = TrafficMatrix::new(mapping.len());
    let prec = model.precision_bytes;
    let m = derived.micro_batches;
    let activation = prec * par.micro_batch * model.seq_len * model.hidden;

    // TP: every AllReduce of one micro-batch and layer has the same payload,
    // so render once and scale by the operation count.
    let tp_ops = m * derived.layers_per_stage * tp_allreduce_per_layer(opts.recompute);
    for group in 0..mapping.tp_group_count() {
        for (src, dst, bytes) in renderer.allreduce_edges(&mapping.tp_group(group), activation) {
            matrix.add(TrafficClass::Tp, src, dst, bytes * tp_ops);
        }
    }

    // PP: activations forward, gradients backward, once per micro-batch and
    // model chunk.
    let pp_bytes = m * activation * par.interleave;
    for rank in 0..mapping.len() {
        if let Some(next) = mapping.pp_peer(rank, 1) {
            matrix.add(TrafficClass::Pp, rank, next, pp_bytes);
            matrix.add(TrafficClass::Pp, next, rank, pp_bytes);
        }
    }

    // DP: one gradient AllReduce per iteration.
    let dp_payload = prec * model.params / (par.pp * par.tp);
    for group in 0..mapping.dp_group_count() {
        for (src, dst, bytes) in renderer.allreduce_edges(&mapping.dp_group(group), dp_payload) {
            matrix.add(TrafficClass::Dp, src, dst, bytes);
        }
    }

    // Embedding gradients between first- and last-stage peers.
    if mapping.pp > 1 && model.vocab_size > 0 {
        let emb = prec * model.vocab_size * model.hidden;
        for rank in 0..mapping.len() {
            if mapping.info(rank).stage == 0 {
                let last = mapping.pp_peer(rank, mapping.pp as isize - 1).expect("last stage exists");
                matrix.add(TrafficClass::EmbSync, rank, last, emb);
                matrix.add(TrafficClass::EmbSync, last, rank, emb);
            }
        }
    }

    if model.kind == ModelKind::Moe && par.ep > 1 {
        let k = opts.k_active.unwrap_or(model.moe_top_k_max);
        let per_op = expected_alltoall_matrix(model, par.ep, k)?;
        let ops = alltoall_per_expert_layer(opts.recompute);
        let expert_layers = expert_layers_per_stage(model, mapping.pp as u64);
        for group in mapping.ep_groups() {
            let stage = mapping.info(group[0]).stage;
            let count = (expert_layers[stage] * ops) as f64;
            for (i, &src) in group.iter().enumerate() {
                for (j, &dst) in group.iter().enumerate() {
                    if i != j {
                        matrix.add(TrafficClass::Ata, src, dst, (per_op.get(i, j) * count).round() as u64);
                    }
                }
            }
        }
    }

    Ok(matrix)
}

/// Expert layers hosted by each pipeline stage. Every
/// `moe_expert_interval`-th transformer block carries an expert layer.
pub fn expert_layers_per_stage(model: &ModelSpec, pp: u64) -> Vec<u64> {
    let per_stage = model.layers / pp;
    let interval = model.moe_expert_interval.max(1);
    (0..pp)
        .map(|stage| {
            let start = stage * per_stage;
            (start..start + per_stage).filter(|layer| (layer + 1) % interval == 0).count() as u64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{validate, ParallelismConfig, PlatformSpec, Topology};
    use crate::traffic::map_ranks;

    fn platform(machines: u64, gpm: u64) -> PlatformSpec {
        PlatformSpec {
            machines,
            gpus_per_machine: gpm,
            peak_flops: 1e12,
            gpu_mem_bytes: 1 << 30,
            intra_topology: Topology::Nvswitch,
            nics_per_machine: 1,
            nic_bw: 0.0,
        }
    }

    fn model(layers: u64, hidden: u64, seq: u64, batch: u64) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::DenseGpt,
            params: 1_000_000,
            layers,
            hidden,
            seq_len: seq,
            global_batch: batch,
            attn_heads: 1,
            vocab_size: 0,
            precision_bytes: 2,
            moe_expert_interval: 2,
            moe_top_k_max: 2,
        }
    }

    fn build(model: &ModelSpec, par: &ParallelismConfig, plat: &PlatformSpec) -> TrafficMatrix {
        let derived = validate(model, par, plat).unwrap();
        let mapping = map_ranks(par, plat, false).unwrap();
        build_traffic_matrix(model, par, &derived, &mapping, &TrafficOptions::default()).unwrap()
    }

    #[test]
    fn unit_degrees_zero_their_class() {
        let mdl = model(4, 8, 4, 4);
        let mx = build(&mdl, &ParallelismConfig::new(2, 1, 1, 1), &platform(1, 2));
        assert_eq!(mx.class_total(TrafficClass::Tp), 0);
        assert_eq!(mx.class_total(TrafficClass::Dp), 0);
        assert!(mx.class_total(TrafficClass::Pp) > 0);
    }

    #[test]
    fn toy_tp_volume_per_rank() {
        // l=2, p=1, t=2, b=1, s=2, h=4, m=3
        let mdl = model(2, 4, 2, 3);
        let mx = build(&mdl, &ParallelismConfig::new(1, 2, 1, 1), &platform(1, 2));
        let expected = 3 * 2 * 6 * 16;
        assert_eq!(mx.get(TrafficClass::Tp, 0, 1), expected);
        assert_eq!(mx.get(TrafficClass::Tp, 1, 0), expected);
        assert_eq!(mx.nonzero_count(TrafficClass::Tp), 2);
    }

    #[test]
    fn no_recompute_uses_four_allreduce() {
        let mdl = model(2, 4, 2, 3);
        let par = ParallelismConfig::new(1, 2, 1, 1);
        let plat = platform(1, 2);
        let derived = validate(&mdl, &par, &plat).unwrap();
        let mapping = map_ranks(&par, &plat, false).unwrap();
        let opts = TrafficOptions { recompute: false, k_active: None };
        let mx = build_traffic_matrix(&mdl, &par, &derived, &mapping, &opts).unwrap();
        assert_eq!(mx.get(TrafficClass::Tp, 0, 1), 3 * 2 * 4 * 16);
    }

    #[test]
    fn embsync_links_first_and_last_stage() {
        let mut mdl = model(4, 8, 4, 4);
        mdl.vocab_size = 10;
        let mx = build(&mdl, &ParallelismConfig::new(4, 1, 1, 1), &platform(1, 4));
        let emb = 2 * 10 * 8;
        assert_eq!(mx.get(TrafficClass::EmbSync, 0, 3), emb);
        assert_eq!(mx.get(TrafficClass::EmbSync, 3, 0), emb);
        assert_eq!(mx.nonzero_count(TrafficClass::EmbSync), 2);
    }

    #[test]
    fn diagonal_is_zero_and_pp_is_two_shifted_diagonals() {
        let mdl = model(8, 8, 4, 8);
        let par = ParallelismConfig::new(4, 2, 2, 1);
        let mx = build(&mdl, &par, &platform(2, 8));
        let n = mx.size();
        for r in 0..n {
            assert_eq!(mx.pair_total(r, r), 0);
        }
        let stride = 4; // t·d
        for ((src, dst), _) in mx.entries(TrafficClass::Pp) {
            assert_eq!(src.abs_diff(dst), stride);
        }
    }

    #[test]
    fn moe_alltoall_embedding() {
        let mut mdl = model(4, 4, 2, 4);
        mdl.kind = ModelKind::Moe;
        let par = ParallelismConfig { ep: 2, ..ParallelismConfig::new(1, 1, 2, 1) };
        let mx = build(&mdl, &par, &platform(1, 2));
        // per op entry = k·2gsh/e² = 2·2·4·2·4/4 = 32; two expert layers, six ops.
        assert_eq!(mx.get(TrafficClass::Ata, 0, 1), 32 * 2 * 6);
        assert_eq!(mx.get(TrafficClass::Ata, 1, 0), 32 * 2 * 6);
        assert_eq!(expert_layers_per_stage(&mdl, 2), vec![1, 1]);
        assert_eq!(expert_layers_per_stage(&mdl, 4), vec![0, 1, 0, 1]);
    }

    #[test]
    fn csv_shape() {
        let mdl = model(2, 4, 2, 3);
        let mx = build(&mdl, &ParallelismConfig::new(1, 2, 1, 1), &platform(1, 2));
        let mut buf = Vec::new();
        mx.write_class_csv(TrafficClass::Tp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "rank,0,1\n0,0,576\n1,576,0\n");
    }
}
