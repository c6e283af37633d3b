//! Text renderings of predictions and tuning results, each prefixed with a
//! provenance comment carrying the tool version and an input digest.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigFile, ModelSpec, ParallelismConfig, PlatformSpec, RunOptions};
use crate::cost::{CostBreakdown, PhaseLookup, Prediction};
use crate::profiles::ProfileSet;
use crate::tuner::{ScaleReport, TuneReport};

pub const TOOL_NAME: &str = "trainperf";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn input_digest<S: AsRef<[u8]>>(parts: &[S]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        let bytes = part.as_ref();
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

/// Canonical text of a profile set, for digests.
pub fn profile_fingerprint(profiles: &ProfileSet) -> String {
    let mut buf = Vec::new();
    profiles.bandwidth.write_csv(&mut buf).expect("writing to memory");
    profiles.utilization.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("profile CSV is UTF-8")
}

/// `trainperf <version> input-sha256=<hex>`
pub fn provenance(digest: &str) -> String {
    format!("{TOOL_NAME} {TOOL_VERSION} input-sha256={digest}")
}

/// Digest over the effective configuration, the profiles and any extra
/// command parameters.
pub fn config_digest(config: &ConfigFile, profiles: &ProfileSet, extra: &[String]) -> String {
    let mut parts = vec![config.to_toml_string(), profile_fingerprint(profiles)];
    parts.extend(extra.iter().cloned());
    input_digest(&parts)
}

#[derive(Serialize)]
struct Derived {
    micro_batches: u64,
    layers_per_stage: u64,
    params_per_gpu: f64,
    mu: f64,
    inter_machine_tp: bool,
}

#[derive(Serialize)]
struct Lookups {
    #[serde(skip_serializing_if = "Option::is_none")]
    tp: Option<PhaseLookup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pp: Option<PhaseLookup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dp: Option<PhaseLookup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ata: Option<PhaseLookup>,
}

#[derive(Serialize)]
struct PredictionDoc<'a> {
    model: &'a ModelSpec,
    parallel: &'a ParallelismConfig,
    platform: &'a PlatformSpec,
    options: &'a RunOptions,
    derived: Derived,
    bandwidth: Lookups,
    breakdown: &'a CostBreakdown,
}

/// Report of one prediction. The leading tables echo the configuration, so
/// the report itself is a valid config file.
pub fn prediction_toml(config: &ConfigFile, pred: &Prediction, digest: &str) -> String {
    let doc = PredictionDoc {
        model: &config.model,
        parallel: &config.parallel,
        platform: &config.platform,
        options: &config.options,
        derived: Derived {
            micro_batches: pred.derived.micro_batches,
            layers_per_stage: pred.derived.layers_per_stage,
            params_per_gpu: pred.derived.params_per_gpu,
            mu: pred.mu,
            inter_machine_tp: pred.inter_machine_tp,
        },
        bandwidth: Lookups { tp: pred.resolved.tp, pp: pred.resolved.pp, dp: pred.resolved.dp, ata: pred.resolved.ata },
        breakdown: &pred.breakdown,
    };
    let body = toml::to_string(&doc).expect("report is representable as TOML");
    format!("# {}\n{body}", provenance(digest))
}

/// Human-readable summary of one prediction.
pub fn prediction_text(pred: &Prediction, digest: &str) -> String {
    let c = &pred.breakdown;
    let mut s = format!("# {}\n", provenance(digest));
    let row = |s: &mut String, name: &str, v: f64| {
        let share = if c.t_iter > 0.0 { 100.0 * v / c.t_iter } else { 0.0 };
        writeln!(s, "{name:<10} {v:>14.6} s {share:>7.2} %").unwrap();
    };
    row(&mut s, "t_comp", c.t_comp);
    row(&mut s, "t_tp", c.t_tp);
    row(&mut s, "t_pp", c.t_pp);
    row(&mut s, "t_dp", c.t_dp);
    row(&mut s, "t_ata", c.t_ata);
    row(&mut s, "t_bubble", c.t_bubble);
    row(&mut s, "t_iter", c.t_iter);
    writeln!(s, "r_bubble   {:.6} (schedule-only {:.6})", c.r_bubble, c.r_bubble_approx).unwrap();
    writeln!(s, "r_comm     {:.6}", c.r_comm).unwrap();
    writeln!(s, "mu         {:.4}", pred.mu).unwrap();
    writeln!(s, "throughput {:.4e} FLOP/s", c.throughput).unwrap();
    if pred.inter_machine_tp {
        writeln!(s, "warning: TP groups span machines").unwrap();
    }
    s
}

#[derive(Serialize)]
struct RankedRow {
    rank: usize,
    pp: u64,
    tp: u64,
    dp: u64,
    ep: u64,
    micro_batch: u64,
    interleave: u64,
    t_iter: f64,
    throughput: f64,
    mu: f64,
    r_bubble: f64,
    r_comm: f64,
    memory_bytes: f64,
    inter_machine_tp: bool,
}

#[derive(Serialize)]
struct ExcludedRow<'a> {
    pp: u64,
    tp: u64,
    dp: u64,
    micro_batch: u64,
    reason: &'a str,
    detail: &'a str,
}

#[derive(Serialize)]
struct TuneDoc<'a> {
    search: &'a str,
    evaluated: usize,
    ranked: Vec<RankedRow>,
    excluded: Vec<ExcludedRow<'a>>,
}

fn ranked_rows(report: &TuneReport) -> Vec<RankedRow> {
    report
        .ranked
        .iter()
        .enumerate()
        .map(|(i, c)| RankedRow {
            rank: i + 1,
            pp: c.parallel.pp,
            tp: c.parallel.tp,
            dp: c.parallel.dp,
            ep: c.parallel.ep,
            micro_batch: c.parallel.micro_batch,
            interleave: c.parallel.interleave,
            t_iter: c.t_iter(),
            throughput: c.prediction.breakdown.throughput,
            mu: c.prediction.mu,
            r_bubble: c.prediction.breakdown.r_bubble,
            r_comm: c.prediction.breakdown.r_comm,
            memory_bytes: c.memory_bytes,
            inter_machine_tp: c.prediction.inter_machine_tp,
        })
        .collect()
}

pub fn tune_toml(search: &str, report: &TuneReport, digest: &str) -> String {
    let doc = TuneDoc {
        search,
        evaluated: report.evaluated(),
        ranked: ranked_rows(report),
        excluded: report
            .excluded
            .iter()
            .map(|e| ExcludedRow {
                pp: e.parallel.pp,
                tp: e.parallel.tp,
                dp: e.parallel.dp,
                micro_batch: e.parallel.micro_batch,
                reason: &e.reason,
                detail: &e.detail,
            })
            .collect(),
    };
    format!("# {}\n{}", provenance(digest), toml::to_string(&doc).expect("tune report is representable as TOML"))
}

pub fn tune_text(report: &TuneReport, digest: &str) -> String {
    let mut s = format!("# {}\n", provenance(digest));
    writeln!(
        s,
        "{:>4} {:>4} {:>4} {:>4} {:>4} {:>14} {:>12} {:>7}",
        "rank", "t", "p", "d", "b", "t_iter_s", "FLOP/s", "mu"
    )
    .unwrap();
    for r in ranked_rows(report) {
        writeln!(
            s,
            "{:>4} {:>4} {:>4} {:>4} {:>4} {:>14.6} {:>12.4e} {:>7.4}",
            r.rank, r.tp, r.pp, r.dp, r.micro_batch, r.t_iter, r.throughput, r.mu
        )
        .unwrap();
    }
    for e in &report.excluded {
        writeln!(
            s,
            "excluded t={} p={} d={} b={}: {}",
            e.parallel.tp, e.parallel.pp, e.parallel.dp, e.parallel.micro_batch, e.reason
        )
        .unwrap();
    }
    s
}

#[derive(Serialize)]
struct ScaleRow<'a> {
    dp: u64,
    gpus: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    micro_batch: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_iter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling_factor: Option<f64>,
    iterations: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    training_hours: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    training_days: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rent_cost: Option<f64>,
    buy_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    infeasible: Option<&'a str>,
}

#[derive(Serialize)]
struct ScaleDoc<'a> {
    tp: u64,
    pp: u64,
    token_budget: f64,
    rent_rate: f64,
    gpu_price: f64,
    points: Vec<ScaleRow<'a>>,
}

pub fn scale_toml(report: &ScaleReport, digest: &str) -> String {
    let doc = ScaleDoc {
        tp: report.tp,
        pp: report.pp,
        token_budget: report.rates.token_budget,
        rent_rate: report.rates.rent_rate,
        gpu_price: report.rates.gpu_price,
        points: report
            .points
            .iter()
            .map(|p| ScaleRow {
                dp: p.dp,
                gpus: p.gpus,
                micro_batch: p.best.as_ref().map(|b| b.parallel.micro_batch),
                t_iter: p.best.as_ref().map(|b| b.t_iter()),
                scaling_factor: p.scaling_factor,
                iterations: p.iterations,
                training_hours: p.training_hours,
                training_days: p.training_days,
                rent_cost: p.rent_cost,
                buy_cost: p.buy_cost,
                infeasible: p.infeasible_reason.as_deref(),
            })
            .collect(),
    };
    format!("# {}\n{}", provenance(digest), toml::to_string(&doc).expect("scale report is representable as TOML"))
}

pub fn scale_text(report: &ScaleReport, digest: &str) -> String {
    let mut s = format!("# {}\n", provenance(digest));
    writeln!(s, "{:>5} {:>6} {:>4} {:>10} {:>10} {:>14} {:>14}", "d", "gpus", "b", "scaling", "days", "rent", "buy")
        .unwrap();
    for p in &report.points {
        match (&p.best, p.scaling_factor, p.training_days, p.rent_cost) {
            (Some(best), Some(f), Some(days), Some(rent)) => writeln!(
                s,
                "{:>5} {:>6} {:>4} {:>10.4} {:>10.2} {:>14.2} {:>14.2}",
                p.dp, p.gpus, best.parallel.micro_batch, f, days, rent, p.buy_cost
            )
            .unwrap(),
            _ => writeln!(s, "{:>5} {:>6} infeasible: {}", p.dp, p.gpus, p.infeasible_reason.as_deref().unwrap_or("?"))
                .unwrap(),
        }
    }
    s
}
