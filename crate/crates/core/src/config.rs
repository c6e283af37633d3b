//! Model, parallelism and platform descriptions plus the quantities derived
//! from them (micro-batch count, layers per stage, parameters per GPU).
//!
//! Everything downstream consumes a validated triple
//! `(ModelSpec, ParallelismConfig, PlatformSpec)` and the [`DerivedParams`]
//! returned by [`validate`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per element unless the model says otherwise (fp16/bf16 training).
pub const DEFAULT_PRECISION_BYTES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    DenseGpt,
    Moe,
}

/// Intra-machine GPU interconnect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Pcie,
    Nvlink,
    Nvswitch,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Pcie, Topology::Nvlink, Topology::Nvswitch];

    pub fn as_str(&self) -> &'static str {
        match self {
            Topology::Pcie => "pcie",
            Topology::Nvlink => "nvlink",
            Topology::Nvswitch => "nvswitch",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pcie" => Ok(Topology::Pcie),
            "nvlink" => Ok(Topology::Nvlink),
            "nvswitch" => Ok(Topology::Nvswitch),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

fn default_precision() -> u64 {
    DEFAULT_PRECISION_BYTES
}

fn default_two() -> u64 {
    2
}

fn default_one() -> u64 {
    1
}

/// Architecture of a GPT or GPT-MoE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub kind: ModelKind,
    /// Total parameter count `N`.
    pub params: u64,
    pub layers: u64,
    pub hidden: u64,
    pub seq_len: u64,
    pub global_batch: u64,
    pub attn_heads: u64,
    /// Only used for the embedding-synchronisation volume; 0 disables it.
    #[serde(default)]
    pub vocab_size: u64,
    #[serde(default = "default_precision")]
    pub precision_bytes: u64,
    /// Transformer blocks per expert layer.
    #[serde(default = "default_two")]
    pub moe_expert_interval: u64,
    /// Upper bound on experts a token may be routed to.
    #[serde(default = "default_two")]
    pub moe_top_k_max: u64,
}

/// Pipeline (`pp`), tensor (`tp`), data (`dp`) and expert (`ep`) degrees plus
/// the micro-batch size and the number of model chunks per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismConfig {
    pub pp: u64,
    pub tp: u64,
    pub dp: u64,
    #[serde(default = "default_one")]
    pub ep: u64,
    pub micro_batch: u64,
    #[serde(default = "default_one")]
    pub interleave: u64,
}

impl ParallelismConfig {
    pub fn new(pp: u64, tp: u64, dp: u64, micro_batch: u64) -> Self {
        Self { pp, tp, dp, ep: 1, micro_batch, interleave: 1 }
    }

    pub fn gpu_count(&self) -> u64 {
        self.pp * self.tp * self.dp
    }
}

/// Hardware shape of the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub machines: u64,
    pub gpus_per_machine: u64,
    /// Peak FLOP/s of one GPU.
    pub peak_flops: f64,
    pub gpu_mem_bytes: u64,
    pub intra_topology: Topology,
    #[serde(default = "default_one")]
    pub nics_per_machine: u64,
    /// Per-NIC line rate in bytes/s. When positive, inter-machine bandwidth
    /// lookups are capped at this machine's NIC capacity per GPU.
    #[serde(default)]
    pub nic_bw: f64,
}

impl PlatformSpec {
    pub fn gpu_count(&self) -> u64 {
        self.machines * self.gpus_per_machine
    }

    /// Same hardware resized to `gpus` GPUs. A count smaller than one machine
    /// becomes a single partially populated machine.
    pub fn with_gpu_count(&self, gpus: u64) -> Option<PlatformSpec> {
        let mut out = self.clone();
        if gpus == 0 {
            return None;
        }
        if gpus < self.gpus_per_machine {
            out.machines = 1;
            out.gpus_per_machine = gpus;
        } else if gpus.is_multiple_of(self.gpus_per_machine) {
            out.machines = gpus / self.gpus_per_machine;
        } else {
            return None;
        }
        Some(out)
    }
}

/// Schedule-level quantities shared by every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// `m = g / (d·b)`
    pub micro_batches: u64,
    /// `l / p`
    pub layers_per_stage: u64,
    /// `N / (p·t)`
    pub params_per_gpu: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("global batch {global_batch} is not divisible by dp·micro_batch = {divisor}")]
    NonDivisibleBatch { global_batch: u64, divisor: u64 },
    #[error("{layers} layers cannot be split evenly into pp·interleave = {divisor} chunks")]
    NonDivisibleLayers { layers: u64, divisor: u64 },
    #[error("{layers} layers are not a multiple of the expert interval {interval}")]
    NonDivisibleExperts { layers: u64, interval: u64 },
    #[error("expert-parallel degree {ep} does not divide the data-parallel degree {dp}")]
    NonDivisibleExpertParallel { ep: u64, dp: u64 },
    #[error("pp·tp·dp = {required} GPUs but the platform has {available}")]
    GpuCountMismatch { required: u64, available: u64 },
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("model.params is missing; set it or enable model.estimate_params")]
    MissingParams,
}

impl ConfigError {
    pub fn name(&self) -> &'static str {
        match self {
            ConfigError::InvalidField { .. } => "InvalidField",
            ConfigError::NonDivisibleBatch { .. } => "NonDivisibleBatch",
            ConfigError::NonDivisibleLayers { .. } => "NonDivisibleLayers",
            ConfigError::NonDivisibleExperts { .. } => "NonDivisibleExperts",
            ConfigError::NonDivisibleExpertParallel { .. } => "NonDivisibleExpertParallel",
            ConfigError::GpuCountMismatch { .. } => "GpuCountMismatch",
            ConfigError::Io(_) => "ConfigIo",
            ConfigError::Parse(_) => "ConfigParse",
            ConfigError::MissingParams => "MissingParams",
        }
    }
}

fn positive(field: &'static str, value: u64) -> Result<(), ConfigError> {
    if value == 0 {
        Err(ConfigError::InvalidField { field, reason: "must be at least 1".into() })
    } else {
        Ok(())
    }
}

/// Checks the model and parallelism layout without looking at the platform.
pub fn validate_layout(model: &ModelSpec, par: &ParallelismConfig) -> Result<DerivedParams, ConfigError> {
    positive("model.params", model.params)?;
    positive("model.layers", model.layers)?;
    positive("model.hidden", model.hidden)?;
    positive("model.seq_len", model.seq_len)?;
    positive("model.global_batch", model.global_batch)?;
    positive("model.attn_heads", model.attn_heads)?;
    positive("model.moe_expert_interval", model.moe_expert_interval)?;
    positive("model.moe_top_k_max", model.moe_top_k_max)?;
    if !matches!(model.precision_bytes, 1 | 2 | 4) {
        return Err(ConfigError::InvalidField {
            field: "model.precision_bytes",
            reason: format!("{} is not one of 1, 2, 4", model.precision_bytes),
        });
    }
    positive("parallel.pp", par.pp)?;
    positive("parallel.tp", par.tp)?;
    positive("parallel.dp", par.dp)?;
    positive("parallel.ep", par.ep)?;
    positive("parallel.micro_batch", par.micro_batch)?;
    positive("parallel.interleave", par.interleave)?;

    match model.kind {
        ModelKind::DenseGpt if par.ep != 1 => {
            return Err(ConfigError::InvalidField { field: "parallel.ep", reason: "dense models use ep = 1".into() });
        }
        ModelKind::Moe => {
            if !model.layers.is_multiple_of(model.moe_expert_interval) {
                return Err(ConfigError::NonDivisibleExperts {
                    layers: model.layers,
                    interval: model.moe_expert_interval,
                });
            }
            if !par.dp.is_multiple_of(par.ep) {
                return Err(ConfigError::NonDivisibleExpertParallel { ep: par.ep, dp: par.dp });
            }
        }
        _ => {}
    }

    let batch_divisor = par.dp * par.micro_batch;
    if !model.global_batch.is_multiple_of(batch_divisor) {
        return Err(ConfigError::NonDivisibleBatch { global_batch: model.global_batch, divisor: batch_divisor });
    }
    let layer_divisor = par.pp * par.interleave;
    if !model.layers.is_multiple_of(layer_divisor) {
        return Err(ConfigError::NonDivisibleLayers { layers: model.layers, divisor: layer_divisor });
    }

    Ok(DerivedParams {
        micro_batches: model.global_batch / batch_divisor,
        layers_per_stage: model.layers / par.pp,
        params_per_gpu: model.params as f64 / (par.pp * par.tp) as f64,
    })
}

/// Validates the full input triple and derives the schedule quantities.
pub fn validate(
    model: &ModelSpec,
    par: &ParallelismConfig,
    platform: &PlatformSpec,
) -> Result<DerivedParams, ConfigError> {
    positive("platform.machines", platform.machines)?;
    positive("platform.gpus_per_machine", platform.gpus_per_machine)?;
    if !(platform.peak_flops.is_finite() && platform.peak_flops > 0.0) {
        return Err(ConfigError::InvalidField {
            field: "platform.peak_flops",
            reason: "must be a positive finite number".into(),
        });
    }
    let derived = validate_layout(model, par)?;
    let required = par.gpu_count();
    let available = platform.gpu_count();
    if required != available {
        return Err(ConfigError::GpuCountMismatch { required, available });
    }
    Ok(derived)
}

/// Rough parameter count `12·l·h² + vocab·h` for when `N` is not known.
pub fn estimate_param_count(layers: u64, hidden: u64, vocab_size: u64, _seq_len: u64) -> u64 {
    12 * layers * hidden * hidden + vocab_size * hidden
}

/// Constants of the per-GPU memory estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    /// fp16 weight + fp16 grad + fp32 master weight + two fp32 Adam moments.
    pub bytes_per_param: f64,
    /// Linear activation coefficient per `s·b·h` element.
    pub act_linear: f64,
    /// Attention-score coefficient, multiplied by `heads·s/h`.
    pub act_attention: f64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self { bytes_per_param: 16.0, act_linear: 34.0, act_attention: 5.0 }
    }
}

impl MemoryModel {
    /// Bytes resident on the busiest GPU (first pipeline stage).
    ///
    /// `weights + one full layer of activations + layer-input checkpoints`.
    /// With recomputation only layer inputs persist; the first stage holds up
    /// to `pp` micro-batches in flight, each with `l/p` checkpoints, and the
    /// layer being recomputed already counts its own input.
    pub fn bytes_per_gpu(&self, model: &ModelSpec, par: &ParallelismConfig) -> f64 {
        let s = model.seq_len as f64;
        let b = par.micro_batch as f64;
        let h = model.hidden as f64;
        let heads = model.attn_heads as f64;
        let t = par.tp as f64;
        let params_per_gpu = model.params as f64 / (par.pp * par.tp) as f64;
        let weights = params_per_gpu * self.bytes_per_param;
        let full_layer = s * b * h * (self.act_linear + self.act_attention * heads * s / h) / t;
        let layers_per_stage = (model.layers / par.pp.max(1)) as f64;
        let checkpoints = (layers_per_stage * par.pp as f64 - 1.0).max(0.0);
        let checkpoint_bytes = model.precision_bytes as f64 * s * b * h * checkpoints;
        weights + full_layer + checkpoint_bytes
    }
}

/// [`MemoryModel::bytes_per_gpu`] with the default constants.
pub fn estimate_memory_per_gpu(model: &ModelSpec, par: &ParallelismConfig) -> f64 {
    MemoryModel::default().bytes_per_gpu(model, par)
}

/// Options that live in the `[options]` table of a config file. CLI flags
/// override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default = "default_true")]
    pub recompute: bool,
    #[serde(default)]
    pub strict_mapping: bool,
    /// Experts per token for MoE traffic; defaults to `moe_top_k_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_active: Option<u64>,
    /// Fraction of DP AllReduce hidden behind backward compute.
    #[serde(default)]
    pub dp_overlap: f64,
    /// DP gradient buckets; the DP bandwidth lookup uses payload / buckets.
    #[serde(default = "default_one")]
    pub dp_buckets: u64,
}

fn default_true() -> bool {
    true
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { recompute: true, strict_mapping: false, k_active: None, dp_overlap: 0.0, dp_buckets: 1 }
    }
}

/// One config file describing model, parallelism and platform together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub model: ModelSpec,
    pub parallel: ParallelismConfig,
    pub platform: PlatformSpec,
    #[serde(default)]
    pub options: RunOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default)]
    kind: ModelKind,
    params: Option<u64>,
    #[serde(default)]
    estimate_params: bool,
    layers: u64,
    hidden: u64,
    seq_len: u64,
    global_batch: u64,
    attn_heads: u64,
    #[serde(default)]
    vocab_size: u64,
    #[serde(default = "default_precision")]
    precision_bytes: u64,
    #[serde(default = "default_two")]
    moe_expert_interval: u64,
    #[serde(default = "default_two")]
    moe_top_k_max: u64,
}

/// Top level of a config file. Unknown top-level tables (for example the
/// breakdown section of a report) are ignored so reports can be re-fed.
#[derive(Deserialize)]
struct RawConfig {
    model: RawModel,
    parallel: ParallelismConfig,
    platform: PlatformSpec,
    #[serde(default)]
    options: RunOptions,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let m = raw.model;
        let params = match (m.params, m.estimate_params) {
            (Some(n), _) => n,
            (None, true) => estimate_param_count(m.layers, m.hidden, m.vocab_size, m.seq_len),
            (None, false) => return Err(ConfigError::MissingParams),
        };
        Ok(ConfigFile {
            model: ModelSpec {
                kind: m.kind,
                params,
                layers: m.layers,
                hidden: m.hidden,
                seq_len: m.seq_len,
                global_batch: m.global_batch,
                attn_heads: m.attn_heads,
                vocab_size: m.vocab_size,
                precision_bytes: m.precision_bytes,
                moe_expert_interval: m.moe_expert_interval,
                moe_top_k_max: m.moe_top_k_max,
            },
            parallel: raw.parallel,
            platform: raw.platform,
            options: raw.options,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML rendering; parsing it back yields an equal value.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<DerivedParams, ConfigError> {
        validate(&self.model, &self.parallel, &self.platform)
    }
}
