//! Configuration search over micro-batch size, parallel layout and DP
//! degree, ranked by predicted iteration time.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{MemoryModel, ModelSpec, ParallelismConfig, PlatformSpec, RunOptions};
use crate::cost::{predict, Prediction};
use crate::profiles::ProfileSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("no feasible candidate among {evaluated} evaluated")]
    NoFeasibleCandidate { evaluated: usize },
    #[error("invalid tuning request: {0}")]
    InvalidRequest(String),
}

impl TuneError {
    pub fn name(&self) -> &'static str {
        match self {
            TuneError::NoFeasibleCandidate { .. } => "NoFeasibleCandidate",
            TuneError::InvalidRequest(_) => "InvalidTuneRequest",
        }
    }
}

/// Inputs shared by every search.
#[derive(Debug, Clone)]
pub struct TuneContext<'a> {
    pub model: &'a ModelSpec,
    pub platform: &'a PlatformSpec,
    pub profiles: &'a ProfileSet,
    pub options: RunOptions,
    pub memory: MemoryModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub parallel: ParallelismConfig,
    pub memory_bytes: f64,
    pub prediction: Prediction,
}

impl RankedCandidate {
    pub fn t_iter(&self) -> f64 {
        self.prediction.breakdown.t_iter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub parallel: ParallelismConfig,
    /// Machine-readable error or filter name.
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub ranked: Vec<RankedCandidate>,
    pub excluded: Vec<Exclusion>,
}

impl TuneReport {
    pub fn best(&self) -> &RankedCandidate {
        &self.ranked[0]
    }

    pub fn evaluated(&self) -> usize {
        self.ranked.len() + self.excluded.len()
    }
}

/// Rounds to 12 significant digits so that iteration times equal up to
/// floating noise compare equal and fall through to the structural
/// tie-break.
pub fn rounded_time(t: f64) -> f64 {
    if t == 0.0 || !t.is_finite() {
        return t;
    }
    format!("{t:.11e}").parse().expect("formatted float parses")
}

/// Ranking key: iteration time, then smaller micro-batch, TP, PP, DP and
/// interleave.
pub fn rank_key(c: &RankedCandidate) -> (f64, u64, u64, u64, u64, u64) {
    let p = &c.parallel;
    (rounded_time(c.t_iter()), p.micro_batch, p.tp, p.pp, p.dp, p.interleave)
}

fn compare(a: &RankedCandidate, b: &RankedCandidate) -> std::cmp::Ordering {
    let (ka, kb) = (rank_key(a), rank_key(b));
    ka.0.total_cmp(&kb.0).then((ka.1, ka.2, ka.3, ka.4, ka.5).cmp(&(kb.1, kb.2, kb.3, kb.4, kb.5)))
}

enum Outcome {
    Ranked(Box<RankedCandidate>),
    Excluded(Exclusion),
}

/// Evaluates one candidate on `platform`, applying the memory filter.
fn evaluate(ctx: &TuneContext<'_>, platform: &PlatformSpec, par: ParallelismConfig) -> Outcome {
    let exclude =
        |reason: &str, detail: String| Outcome::Excluded(Exclusion { parallel: par, reason: reason.into(), detail });
    match predict(ctx.model, &par, platform, ctx.profiles, &ctx.options) {
        Err(e) => exclude(e.name(), e.to_string()),
        Ok(prediction) => {
            let memory_bytes = ctx.memory.bytes_per_gpu(ctx.model, &par);
            if memory_bytes > platform.gpu_mem_bytes as f64 {
                exclude(
                    "MemoryExceeded",
                    format!("needs {memory_bytes:.0} bytes per GPU, has {}", platform.gpu_mem_bytes),
                )
            } else {
                Outcome::Ranked(Box::new(RankedCandidate { parallel: par, memory_bytes, prediction }))
            }
        }
    }
}

/// Evaluates candidates in parallel and merges in input order, so reports do
/// not depend on completion order.
fn run(ctx: &TuneContext<'_>, candidates: Vec<(PlatformSpec, ParallelismConfig)>) -> Result<TuneReport, TuneError> {
    let outcomes: Vec<Outcome> = candidates.par_iter().map(|(plat, par)| evaluate(ctx, plat, *par)).collect();
    let evaluated = outcomes.len();
    let mut ranked = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Ranked(r) => ranked.push(*r),
            Outcome::Excluded(e) => excluded.push(e),
        }
    }
    if ranked.is_empty() {
        return Err(TuneError::NoFeasibleCandidate { evaluated });
    }
    ranked.sort_by(compare);
    Ok(TuneReport { ranked, excluded })
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn micro_batch_candidates(model: &ModelSpec, dp: u64, explicit: Option<&[u64]>) -> Vec<u64> {
    match explicit {
        Some(list) => {
            let mut v = list.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None if model.global_batch.is_multiple_of(dp) => divisors(model.global_batch / dp),
        None => Vec::new(),
    }
}

/// Best micro-batch for a fixed layout. Without an explicit list the
/// candidates are all divisors of the per-replica batch.
pub fn tune_micro_batch(
    ctx: &TuneContext<'_>,
    layout: &ParallelismConfig,
    candidates: Option<&[u64]>,
) -> Result<TuneReport, TuneError> {
    let bs = micro_batch_candidates(ctx.model, layout.dp, candidates);
    if bs.is_empty() {
        return Err(TuneError::InvalidRequest(format!(
            "global batch {} is not divisible by dp = {}",
            ctx.model.global_batch, layout.dp
        )));
    }
    let list =
        bs.into_iter().map(|b| (ctx.platform.clone(), ParallelismConfig { micro_batch: b, ..*layout })).collect();
    run(ctx, list)
}

/// `(t, p, d)` factorizations of `gpus`, ordered by `t` then `p`.
pub fn layouts(gpus: u64) -> Vec<(u64, u64, u64)> {
    let mut out = Vec::new();
    for t in divisors(gpus) {
        for p in divisors(gpus / t) {
            out.push((t, p, gpus / (t * p)));
        }
    }
    out
}

/// Searches every `(t, p, d)` factorization of the platform's GPU count,
/// each with every micro-batch dividing its per-replica batch. EP degree
/// and interleave come from `base`.
pub fn tune_parallelism(ctx: &TuneContext<'_>, base: &ParallelismConfig) -> Result<TuneReport, TuneError> {
    let mut list = Vec::new();
    for (t, p, d) in layouts(ctx.platform.gpu_count()) {
        let layout = ParallelismConfig { pp: p, tp: t, dp: d, ..*base };
        if ctx.options.strict_mapping && t > ctx.platform.gpus_per_machine {
            // Recorded as an exclusion through the mapping error.
            list.push((ctx.platform.clone(), ParallelismConfig { micro_batch: 1, ..layout }));
            continue;
        }
        let bs = micro_batch_candidates(ctx.model, d, None);
        if bs.is_empty() {
            list.push((ctx.platform.clone(), ParallelismConfig { micro_batch: 1, ..layout }));
        }
        for b in bs {
            list.push((ctx.platform.clone(), ParallelismConfig { micro_batch: b, ..layout }));
        }
    }
    run(ctx, list)
}

/// Monetary inputs of a DP sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostRates {
    /// Training tokens.
    pub token_budget: f64,
    /// Currency per GPU-hour.
    pub rent_rate: f64,
    /// Currency per GPU.
    pub gpu_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalePoint {
    pub dp: u64,
    pub gpus: u64,
    pub best: Option<RankedCandidate>,
    pub infeasible_reason: Option<String>,
    pub scaling_factor: Option<f64>,
    pub iterations: f64,
    pub training_hours: Option<f64>,
    pub training_days: Option<f64>,
    pub rent_cost: Option<f64>,
    pub buy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleReport {
    pub tp: u64,
    pub pp: u64,
    pub rates: CostRates,
    pub points: Vec<ScalePoint>,
}

impl ScaleReport {
    /// Writes `d,scaling_factor,days,rent_cost,buy_cost`; infeasible points
    /// leave the predicted columns empty.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "d,scaling_factor,days,rent_cost,buy_cost")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.dp,
                opt(p.scaling_factor),
                opt(p.training_days),
                opt(p.rent_cost),
                p.buy_cost
            )?;
        }
        Ok(())
    }
}

/// Sweeps the DP degree at fixed global batch. For each `d` the platform is
/// resized to `t·p·d` GPUs and the micro-batch is re-tuned; with
/// `cross_product` the `(t, p)` split of each `t·p·d` is searched too.
///
/// `scaling_factor(d) = d₀·t_iter(d₀)/t_iter(d)` where `d₀` is the smallest
/// feasible degree in the sweep, which is `t_iter(1)/t_iter(d)` whenever
/// `d = 1` is included.
pub fn scale_analysis(
    ctx: &TuneContext<'_>,
    base: &ParallelismConfig,
    dps: &[u64],
    rates: CostRates,
    cross_product: bool,
) -> Result<ScaleReport, TuneError> {
    if dps.is_empty() {
        return Err(TuneError::InvalidRequest("empty DP sweep".into()));
    }
    let iterations = rates.token_budget / (ctx.model.global_batch * ctx.model.seq_len) as f64;
    let mut points: Vec<ScalePoint> = dps
        .par_iter()
        .map(|&d| {
            let gpus = base.tp * base.pp * d;
            let mut point = ScalePoint {
                dp: d,
                gpus,
                best: None,
                infeasible_reason: None,
                scaling_factor: None,
                iterations,
                training_hours: None,
                training_days: None,
                rent_cost: None,
                buy_cost: rates.gpu_price * gpus as f64,
            };
            let Some(platform) = ctx.platform.with_gpu_count(gpus) else {
                point.infeasible_reason = Some("PlatformResize".into());
                return point;
            };
            if !ctx.model.global_batch.is_multiple_of(d) {
                point.infeasible_reason = Some("NonDivisibleBatch".into());
                return point;
            }
            let sub = TuneContext { platform: &platform, ..ctx.clone() };
            let layout = ParallelismConfig { dp: d, ..*base };
            let report =
                if cross_product { search_split(&sub, &layout) } else { tune_micro_batch(&sub, &layout, None) };
            match report {
                Ok(r) => point.best = Some(r.ranked.into_iter().next().expect("non-empty ranking")),
                Err(e) => point.infeasible_reason = Some(e.name().into()),
            }
            point
        })
        .collect();
    points.sort_by_key(|p| p.dp);

    let reference = points.iter().find_map(|p| p.best.as_ref().map(|b| (p.dp, b.t_iter())));
    for p in &mut points {
        if let (Some(best), Some((d0, t0))) = (&p.best, reference) {
            let t = best.t_iter();
            let hours = iterations * t / 3600.0;
            p.scaling_factor = Some(d0 as f64 * t0 / t);
            p.training_hours = Some(hours);
            p.training_days = Some(hours / 24.0);
            p.rent_cost = Some(rates.rent_rate * p.gpus as f64 * hours);
        }
    }
    Ok(ScaleReport { tp: base.tp, pp: base.pp, rates, points })
}

/// All `(t, p)` splits of `t·p` at the given DP degree.
fn search_split(ctx: &TuneContext<'_>, layout: &ParallelismConfig) -> Result<TuneReport, TuneError> {
    let mut list = Vec::new();
    for t in divisors(layout.tp * layout.pp) {
        let p = layout.tp * layout.pp / t;
        for b in micro_batch_candidates(ctx.model, layout.dp, None) {
            list.push((ctx.platform.clone(), ParallelismConfig { tp: t, pp: p, micro_batch: b, ..*layout }));
        }
    }
    run(ctx, list)
}
