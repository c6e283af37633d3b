//! Closed-form iteration-time model: per-phase compute and communication
//! times, pipeline bubble, and their assembly into one iteration.

use serde::Serialize;
use thiserror::Error;

use crate::config::{
    validate, ConfigError, DerivedParams, ModelKind, ModelSpec, ParallelismConfig, PlatformSpec, RunOptions,
};
use crate::profiles::{Locality, OpKind, ProfileError, ProfileSet};
use crate::traffic::{alltoall_per_expert_layer, map_ranks, tp_allreduce_per_layer, RankMapping, Span, TrafficError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("utilization must lie in (0, 1], got {0}")]
    InvalidUtilization(f64),
    #[error("peak FLOP/s must be positive, got {0}")]
    InvalidPeakFlops(f64),
    #[error("{phase} bandwidth must be positive, got {value}")]
    InvalidBandwidth { phase: &'static str, value: f64 },
    #[error("AllToAll time requires a MoE model")]
    NotMoeModel,
    #[error("k_active {k_active} outside 1..={max}")]
    InvalidKActive { k_active: u64, max: u64 },
    #[error("iteration assemblies disagree: {eq_sum} vs {eq_mb}")]
    AssemblyMismatch { eq_sum: f64, eq_mb: f64 },
}

impl CostError {
    pub fn name(&self) -> &'static str {
        match self {
            CostError::Config(e) => e.name(),
            CostError::Traffic(e) => e.name(),
            CostError::Profile(e) => e.name(),
            CostError::InvalidUtilization(_) => "InvalidUtilization",
            CostError::InvalidPeakFlops(_) => "InvalidPeakFlops",
            CostError::InvalidBandwidth { .. } => "InvalidBandwidth",
            CostError::NotMoeModel => "NotMoeModel",
            CostError::InvalidKActive { .. } => "InvalidKActive",
            CostError::AssemblyMismatch { .. } => "AssemblyMismatch",
        }
    }
}

/// Effective bandwidth of each communication phase in bytes/s. Phases that
/// cannot occur for a layout (for example TP with `t = 1`) carry
/// `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseBandwidths {
    pub c_tp: f64,
    pub c_pp: f64,
    pub c_dp: f64,
    pub c_ata: f64,
}

impl PhaseBandwidths {
    pub fn uniform(c: f64) -> Self {
        Self { c_tp: c, c_pp: c, c_dp: c, c_ata: c }
    }

    fn check(&self) -> Result<(), CostError> {
        for (phase, value) in [("tp", self.c_tp), ("pp", self.c_pp), ("dp", self.c_dp), ("ata", self.c_ata)] {
            if value.is_nan() || value <= 0.0 {
                return Err(CostError::InvalidBandwidth { phase, value });
            }
        }
        Ok(())
    }
}

/// Model switches that change operation counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostOptions {
    pub recompute: bool,
    pub k_active: Option<u64>,
    /// Fraction of the DP AllReduce hidden behind backward compute.
    pub dp_overlap: f64,
}

impl Default for CostOptions {
    fn default() -> Self {
        Self { recompute: true, k_active: None, dp_overlap: 0.0 }
    }
}

impl From<&RunOptions> for CostOptions {
    fn from(o: &RunOptions) -> Self {
        Self { recompute: o.recompute, k_active: o.k_active, dp_overlap: o.dp_overlap }
    }
}

fn activation_bytes(model: &ModelSpec, par: &ParallelismConfig) -> f64 {
    (model.precision_bytes * par.micro_batch * model.seq_len * model.hidden) as f64
}

fn ring_factor(k: u64) -> f64 {
    2.0 * (k - 1) as f64 / k as f64
}

/// TP time per iteration and per micro-batch.
pub fn tp_time(
    model: &ModelSpec,
    par: &ParallelismConfig,
    derived: &DerivedParams,
    c_tp: f64,
    recompute: bool,
) -> (f64, f64) {
    if par.tp == 1 {
        return (0.0, 0.0);
    }
    let ops = (derived.layers_per_stage * tp_allreduce_per_layer(recompute)) as f64;
    let mb = ops * activation_bytes(model, par) * ring_factor(par.tp) / c_tp;
    (derived.micro_batches as f64 * mb, mb)
}

/// PP time: one send and one receive per micro-batch and model chunk.
pub fn pp_time(model: &ModelSpec, par: &ParallelismConfig, derived: &DerivedParams, c_pp: f64) -> (f64, f64) {
    if par.pp == 1 {
        return (0.0, 0.0);
    }
    let mb = 2.0 * activation_bytes(model, par) * par.interleave as f64 / c_pp;
    (derived.micro_batches as f64 * mb, mb)
}

/// Gradient AllReduce time, reduced by the overlapped fraction.
pub fn dp_time(model: &ModelSpec, par: &ParallelismConfig, c_dp: f64, overlap: f64) -> f64 {
    if par.dp == 1 {
        return 0.0;
    }
    let payload = model.precision_bytes as f64 * model.params as f64 / (par.pp * par.tp) as f64;
    payload * ring_factor(par.dp) / c_dp * (1.0 - overlap)
}

/// FLOPs per parameter and token: forward 2, backward 4, plus 2 for
/// recomputing the forward.
pub fn flops_per_param_token(recompute: bool) -> f64 {
    if recompute {
        8.0
    } else {
        6.0
    }
}

/// Returns `(t_comp, t_comp_mb, flops_per_mb)`.
pub fn comp_time(
    model: &ModelSpec,
    par: &ParallelismConfig,
    derived: &DerivedParams,
    peak_flops: f64,
    mu: f64,
    recompute: bool,
) -> Result<(f64, f64, f64), CostError> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(CostError::InvalidUtilization(mu));
    }
    if peak_flops.is_nan() || peak_flops <= 0.0 {
        return Err(CostError::InvalidPeakFlops(peak_flops));
    }
    let flops_mb = flops_per_param_token(recompute) * model.params as f64 / (par.pp * par.tp) as f64
        * (par.micro_batch * model.seq_len) as f64;
    let mb = flops_mb / (mu * peak_flops);
    Ok((derived.micro_batches as f64 * mb, mb, flops_mb))
}

/// Pipeline bubble time and the schedule-only ratio `(p-1)/(p-1+m)/v`.
pub fn bubble(p: u64, m: u64, v: u64, t_comp_mb: f64, t_tp_mb: f64, t_pp_mb: f64) -> (f64, f64) {
    if p == 1 {
        return (0.0, 0.0);
    }
    let v = v as f64;
    let t_bubble = (p - 1) as f64 * (t_comp_mb + t_tp_mb + t_pp_mb) / v;
    (t_bubble, bubble_ratio_approx(p, m, v))
}

fn bubble_ratio_approx(p: u64, m: u64, v: f64) -> f64 {
    let idle = (p - 1) as f64;
    idle / (idle + m as f64) / v
}

/// AllToAll time of all expert layers, using the global batch.
pub fn alltoall_time(model: &ModelSpec, e: u64, c_ata: f64, k_active: u64, recompute: bool) -> Result<f64, CostError> {
    if model.kind != ModelKind::Moe {
        return Err(CostError::NotMoeModel);
    }
    if k_active == 0 || k_active > model.moe_top_k_max {
        return Err(CostError::InvalidKActive { k_active, max: model.moe_top_k_max });
    }
    let expert_layers = (model.layers / model.moe_expert_interval) as f64;
    let ops = alltoall_per_expert_layer(recompute) as f64;
    let payload = (k_active * model.precision_bytes * model.global_batch * model.seq_len * model.hidden) as f64;
    Ok(expert_layers * ops * payload / (e as f64 * c_ata))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub t_comp: f64,
    pub t_tp: f64,
    pub t_pp: f64,
    pub t_dp: f64,
    pub t_ata: f64,
    pub t_bubble: f64,
    pub t_iter: f64,
    pub t_comp_mb: f64,
    pub t_tp_mb: f64,
    pub t_pp_mb: f64,
    pub flops_per_mb: f64,
    /// `t_bubble / t_iter`.
    pub r_bubble: f64,
    /// `(p-1)/(p-1+m)/v`, independent of all times.
    pub r_bubble_approx: f64,
    pub r_comm: f64,
    /// Model FLOPs per second of the whole job.
    pub throughput: f64,
}

impl CostBreakdown {
    pub fn t_comm(&self) -> f64 {
        self.t_tp + self.t_pp + self.t_dp + self.t_ata
    }

    /// Sum of phase totals.
    pub fn assemble_by_phase(&self) -> f64 {
        self.t_comp + self.t_tp + self.t_pp + self.t_dp + self.t_ata + self.t_bubble
    }

    /// Steady-state micro-batch work plus bubble and once-per-iteration
    /// phases.
    pub fn assemble_by_micro_batch(&self, m: u64) -> f64 {
        m as f64 * (self.t_comp_mb + self.t_pp_mb + self.t_tp_mb) + self.t_bubble + self.t_dp + self.t_ata
    }
}

/// Relative tolerance for the two assemblies to agree.
pub const ASSEMBLY_TOLERANCE: f64 = 1e-9;

/// Full per-iteration breakdown for given bandwidths and utilization.
pub fn iteration(
    model: &ModelSpec,
    par: &ParallelismConfig,
    derived: &DerivedParams,
    bw: &PhaseBandwidths,
    peak_flops: f64,
    mu: f64,
    opts: &CostOptions,
) -> Result<CostBreakdown, CostError> {
    bw.check()?;
    let (t_comp, t_comp_mb, flops_per_mb) = comp_time(model, par, derived, peak_flops, mu, opts.recompute)?;
    let (t_tp, t_tp_mb) = tp_time(model, par, derived, bw.c_tp, opts.recompute);
    let (t_pp, t_pp_mb) = pp_time(model, par, derived, bw.c_pp);
    let t_dp = dp_time(model, par, bw.c_dp, opts.dp_overlap);
    let t_ata = match model.kind {
        ModelKind::Moe if par.ep > 1 => {
            alltoall_time(model, par.ep, bw.c_ata, opts.k_active.unwrap_or(model.moe_top_k_max), opts.recompute)?
        }
        _ => 0.0,
    };
    let m = derived.micro_batches;
    let (t_bubble, r_bubble_approx) = bubble(par.pp, m, par.interleave, t_comp_mb, t_tp_mb, t_pp_mb);

    let mut out = CostBreakdown {
        t_comp,
        t_tp,
        t_pp,
        t_dp,
        t_ata,
        t_bubble,
        t_iter: 0.0,
        t_comp_mb,
        t_tp_mb,
        t_pp_mb,
        flops_per_mb,
        r_bubble: 0.0,
        r_bubble_approx,
        r_comm: 0.0,
        throughput: 0.0,
    };
    let eq_sum = out.assemble_by_phase();
    let eq_mb = out.assemble_by_micro_batch(m);
    if (eq_sum - eq_mb).abs() > ASSEMBLY_TOLERANCE * eq_sum.abs().max(eq_mb.abs()) {
        return Err(CostError::AssemblyMismatch { eq_sum, eq_mb });
    }
    out.t_iter = eq_sum;
    if eq_sum > 0.0 {
        out.r_bubble = t_bubble / eq_sum;
        out.r_comm = out.t_comm() / eq_sum;
        out.throughput =
            flops_per_param_token(true) * model.params as f64 * (model.global_batch * model.seq_len) as f64 / eq_sum;
    }
    Ok(out)
}

/// One phase's bandwidth lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseLookup {
    pub op: OpKind,
    pub locality: Locality,
    pub scale: u64,
    pub msg_bytes: f64,
    pub bw_bytes_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedBandwidths {
    pub bandwidths: PhaseBandwidths,
    pub tp: Option<PhaseLookup>,
    pub pp: Option<PhaseLookup>,
    pub dp: Option<PhaseLookup>,
    pub ata: Option<PhaseLookup>,
}

fn locality(span: Span) -> Locality {
    match span {
        Span::IntraMachine => Locality::Intra,
        Span::InterMachine => Locality::Inter,
    }
}

/// Looks up `C` for every phase the layout uses.
///
/// Messages are keyed by the per-operation payload: `prec·b·s·h` for TP and
/// PP, the gradient shard divided by `dp_buckets` for DP, the expected
/// per-pair volume for AllToAll. Locality follows the rank mapping. When the
/// platform declares NIC capacity, inter-machine values are capped at each
/// GPU's share of it.
pub fn resolve_bandwidths(
    model: &ModelSpec,
    par: &ParallelismConfig,
    platform: &PlatformSpec,
    mapping: &RankMapping,
    profiles: &ProfileSet,
    opts: &RunOptions,
) -> Result<ResolvedBandwidths, CostError> {
    let topo = platform.intra_topology;
    let nic_share = if platform.nic_bw > 0.0 {
        platform.nic_bw * platform.nics_per_machine as f64 / platform.gpus_per_machine as f64
    } else {
        f64::INFINITY
    };
    let look = |op, span: Span, scale: u64, msg_bytes: f64| -> Result<PhaseLookup, CostError> {
        let locality = locality(span);
        let mut bw = profiles.bandwidth.lookup(op, locality, topo, scale, msg_bytes)?;
        if locality == Locality::Inter {
            bw = bw.min(nic_share);
        }
        Ok(PhaseLookup { op, locality, scale, msg_bytes, bw_bytes_per_s: bw })
    };
    let act = activation_bytes(model, par);
    let tp = (par.tp > 1).then(|| look(OpKind::Allreduce, mapping.tp_span(), par.tp, act)).transpose()?;
    let pp = (par.pp > 1).then(|| look(OpKind::P2p, mapping.pp_span(), 2, act)).transpose()?;
    let dp_msg =
        model.precision_bytes as f64 * model.params as f64 / (par.pp * par.tp) as f64 / opts.dp_buckets.max(1) as f64;
    let dp = (par.dp > 1).then(|| look(OpKind::Allreduce, mapping.dp_span(), par.dp, dp_msg)).transpose()?;
    let ata = if model.kind == ModelKind::Moe && par.ep > 1 {
        let k = opts.k_active.unwrap_or(model.moe_top_k_max);
        let pair = (k * model.precision_bytes * model.global_batch * model.seq_len * model.hidden) as f64
            / (par.ep * par.ep) as f64;
        Some(look(OpKind::Alltoall, mapping.ep_span(), par.ep, pair)?)
    } else {
        None
    };
    let bw = |l: Option<PhaseLookup>| l.map_or(f64::INFINITY, |l| l.bw_bytes_per_s);
    Ok(ResolvedBandwidths {
        bandwidths: PhaseBandwidths { c_tp: bw(tp), c_pp: bw(pp), c_dp: bw(dp), c_ata: bw(ata) },
        tp,
        pp,
        dp,
        ata,
    })
}

/// Everything the cost model needs and produces for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub derived: DerivedParams,
    pub inter_machine_tp: bool,
    pub mu: f64,
    pub resolved: ResolvedBandwidths,
    pub breakdown: CostBreakdown,
}

/// Validates, maps, looks up profiles and evaluates one configuration.
pub fn predict(
    model: &ModelSpec,
    par: &ParallelismConfig,
    platform: &PlatformSpec,
    profiles: &ProfileSet,
    opts: &RunOptions,
) -> Result<Prediction, CostError> {
    let derived = validate(model, par, platform)?;
    let mapping = map_ranks(par, platform, opts.strict_mapping)?;
    let mu = profiles.utilization.lookup(derived.params_per_gpu, par.micro_batch)?;
    let resolved = resolve_bandwidths(model, par, platform, &mapping, profiles, opts)?;
    let breakdown = iteration(model, par, &derived, &resolved.bandwidths, platform.peak_flops, mu, &opts.into())?;
    Ok(Prediction { derived, inter_machine_tp: mapping.inter_machine_tp, mu, resolved, breakdown })
}
