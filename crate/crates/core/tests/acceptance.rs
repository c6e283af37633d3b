//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use trainperf_core::config::{
    validate_layout, ConfigFile, MemoryModel, ModelKind, ModelSpec, ParallelismConfig, PlatformSpec, RunOptions,
    Topology,
};
use trainperf_core::cost::{
    alltoall_time, dp_time, iteration, pp_time, predict, tp_time, CostOptions, PhaseBandwidths,
};
use trainperf_core::profiles::{
    default_bandwidth_profile, default_utilization_profile, ingest_bandwidth, ingest_utilization, parse_profile_csv,
    BandwidthRecord, ColumnDefaults, Locality, OpKind, ProfileDocument, ProfileSet, UtilizationRecord, ANY_SCALE,
};
use trainperf_core::sim::{simulate, SimInput};
use trainperf_core::traffic::{
    build_traffic_matrix, expected_alltoall_matrix, map_ranks, predict_alltoall_sequence, uniformity_metrics,
    AllToAllHeatmap, CollectiveRenderer, RingAllReduce, TrafficClass, TrafficOptions,
};
use trainperf_core::tuner::{scale_analysis, tune_micro_batch, tune_parallelism, CostRates, TuneContext};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn hopper(machines: u64, gpm: u64) -> PlatformSpec {
    PlatformSpec {
        machines,
        gpus_per_machine: gpm,
        peak_flops: 989e12,
        gpu_mem_bytes: 80_000_000_000,
        intra_topology: Topology::Nvswitch,
        nics_per_machine: 8,
        nic_bw: 0.0,
    }
}

fn gpt(params: u64, layers: u64, heads: u64, hidden: u64, seq: u64, batch: u64) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::DenseGpt,
        params,
        layers,
        hidden,
        seq_len: seq,
        global_batch: batch,
        attn_heads: heads,
        vocab_size: 50257,
        precision_bytes: 2,
        moe_expert_interval: 2,
        moe_top_k_max: 2,
    }
}

fn pick<T: Copy>(rng: &mut StdRng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

// Closed-form bubble ratio against the simulated schedule.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_plain: f64 = 0.0;
    let mut worst_interleaved: f64 = 0.0;
    let mut example = None;
    let mut rejected = 0;
    let mut checked = 0;
    for v in [1usize, 2, 4] {
        for p in 1..=8usize {
            for m in 1..=32usize {
                let result = match simulate(&SimInput::uniform(p, m, v, 1.0)) {
                    Ok(r) => r,
                    Err(_) => {
                        rejected += 1;
                        continue;
                    }
                };
                checked += 1;
                let want = (p as f64 - 1.0) / (p as f64 - 1.0 + m as f64) / v as f64;
                let err = rel_diff(result.bubble_ratio, want);
                if v == 1 {
                    worst_plain = worst_plain.max(err);
                } else if err > worst_interleaved {
                    worst_interleaved = err;
                    example = Some((p, m, v, result.bubble_ratio, want));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!(
        "{checked} schedules in {secs:.2}s, v=1 max rel err {worst_plain:.1e}, v>1 max rel err {worst_interleaved:.1e}, {rejected} rejected (v>1 needs p | m)"
    );
    if let Some((p, m, v, got, want)) = example {
        detail += &format!("; worst p={p} m={m} v={v}: simulated {got:.6} vs divided-by-v {want:.6}");
    }
    outcome(worst_plain <= 1e-9 && worst_interleaved <= 1e-9 && secs < 5.0, detail)
}

fn random_valid(rng: &mut StdRng) -> (ModelSpec, ParallelismConfig) {
    let p = pick(rng, &[1, 2, 3, 4, 8]);
    let t = pick(rng, &[1, 2, 4, 8]);
    let d = pick(rng, &[1, 2, 4, 8]);
    let v = if p > 1 { pick(rng, &[1, 1, 2, 4]) } else { 1 };
    let b = rng.random_range(1..=8);
    let m = rng.random_range(1..=16);
    let moe = rng.random_bool(0.3);
    let interval = pick(rng, &[1, 2]);
    let layers = p * v * interval * rng.random_range(1..=6);
    let mut model = gpt(
        rng.random_range(1_000_000..100_000_000_000),
        layers,
        8,
        pick(rng, &[256, 1024, 4096, 12288]),
        pick(rng, &[128, 512, 2048]),
        d * b * m,
    );
    model.precision_bytes = pick(rng, &[1, 2, 4]);
    model.vocab_size = pick(rng, &[0, 50257]);
    let ep = if moe {
        model.kind = ModelKind::Moe;
        model.moe_expert_interval = interval;
        pick(rng, &[1, 2, 4, 8].iter().copied().filter(|e| d.is_multiple_of(*e)).collect::<Vec<_>>())
    } else {
        1
    };
    (model, ParallelismConfig { pp: p, tp: t, dp: d, ep, micro_batch: b, interleave: v })
}

fn random_bandwidths(rng: &mut StdRng) -> PhaseBandwidths {
    let mut bw = || 10f64.powf(rng.random_range(8.0..12.0));
    PhaseBandwidths { c_tp: bw(), c_pp: bw(), c_dp: bw(), c_ata: bw() }
}

fn random_options(rng: &mut StdRng, model: &ModelSpec) -> CostOptions {
    CostOptions {
        recompute: rng.random_bool(0.5),
        k_active: if model.kind == ModelKind::Moe { Some(rng.random_range(1..=model.moe_top_k_max)) } else { None },
        dp_overlap: pick(rng, &[0.0, 0.0, 0.5, 0.9]),
    }
}

// Phase-sum and per-micro-batch assemblies of the iteration time.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let (model, par) = random_valid(&mut rng);
        let derived = validate_layout(&model, &par).expect("generator yields valid layouts");
        let bw = random_bandwidths(&mut rng);
        let opts = random_options(&mut rng, &model);
        let mu = rng.random_range(0.05..0.9);
        match iteration(&model, &par, &derived, &bw, 989e12, mu, &opts) {
            Ok(c) => {
                let by_mb = c.assemble_by_micro_batch(derived.micro_batches);
                worst = worst.max(rel_diff(c.assemble_by_phase(), by_mb)).max(rel_diff(c.t_iter, by_mb));
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && failures == 0 && secs < 5.0,
        format!("1000 configurations in {secs:.2}s, max rel diff {worst:.1e}, {failures} errors"),
    )
}

// Traffic matrix of (p, t, d) = (4, 2, 4) against an enumeration oracle.
fn criterion_3() -> Outcome {
    let (p, t, d) = (4usize, 2usize, 4usize);
    let model = gpt(1_000_000_000, 8, 4, 64, 16, 16);
    let par = ParallelismConfig::new(p as u64, t as u64, d as u64, 1);
    let platform = hopper(4, 8);
    let derived = validate_layout(&model, &par).unwrap();
    let mapping = map_ranks(&par, &platform, true).unwrap();
    let matrix = build_traffic_matrix(&model, &par, &derived, &mapping, &TrafficOptions::default()).unwrap();

    // Coordinates of every rank, enumerated independently of the mapping.
    let mut coords = Vec::new();
    for s in 0..p {
        for di in 0..d {
            for ti in 0..t {
                coords.push((s, di, ti));
            }
        }
    }
    let expected = |class: TrafficClass, a: (usize, usize, usize), b: (usize, usize, usize)| -> bool {
        match class {
            TrafficClass::Tp => a.0 == b.0 && a.1 == b.1 && a.2 != b.2,
            TrafficClass::Dp => a.0 == b.0 && a.2 == b.2 && b.1 == (a.1 + 1) % d,
            TrafficClass::Pp => a.1 == b.1 && a.2 == b.2 && a.0.abs_diff(b.0) == 1,
            TrafficClass::EmbSync => a.1 == b.1 && a.2 == b.2 && a.0.min(b.0) == 0 && a.0.max(b.0) == p - 1,
            TrafficClass::Ata => false,
        }
    };
    let mut mismatches = 0;
    for class in TrafficClass::ALL {
        for (i, &a) in coords.iter().enumerate() {
            for (j, &b) in coords.iter().enumerate() {
                if (matrix.get(class, i, j) > 0) != expected(class, a, b) {
                    mismatches += 1;
                }
            }
        }
    }
    // Group-level shape: one TP peer, four-member DP rings.
    let mut shape_ok = true;
    for (i, &a) in coords.iter().enumerate() {
        let tp_peers: BTreeSet<usize> = (0..coords.len()).filter(|&j| matrix.get(TrafficClass::Tp, i, j) > 0).collect();
        let ring: BTreeSet<usize> = (0..coords.len())
            .filter(|&j| matrix.get(TrafficClass::Dp, i, j) > 0 || matrix.get(TrafficClass::Dp, j, i) > 0)
            .chain([i])
            .collect();
        let mut closure = ring.clone();
        for _ in 0..d {
            let next: BTreeSet<usize> = closure
                .iter()
                .flat_map(|&x| {
                    let matrix = &matrix;
                    (0..coords.len()).filter(move |&j| matrix.get(TrafficClass::Dp, x, j) > 0)
                })
                .chain(closure.iter().copied())
                .collect();
            closure = next;
        }
        shape_ok &= tp_peers.len() == 1
            && closure.len() == d
            && closure.iter().all(|&j| coords[j].0 == a.0 && coords[j].2 == a.2);
    }
    let tp_edges = matrix.nonzero_count(TrafficClass::Tp);
    outcome(
        mismatches == 0 && shape_ok && matrix.size() == 32 && tp_edges == 32,
        format!(
            "32x32x5 entries checked, {mismatches} mismatches, {tp_edges} TP edges, group shapes {}",
            if shape_ok { "ok" } else { "wrong" }
        ),
    )
}

// TP share of total volume for the large published GPT configurations.
fn criterion_4() -> Outcome {
    // Global batch = per-replica batch · d. The 76B row
    // uses 64 layers because 60 is not divisible by p = 8.
    let rows: [(&str, ModelSpec, (u64, u64, u64)); 4] = [
        ("39B (4,4,2)", gpt(39_000_000_000, 48, 64, 8192, 2048, 96), (4, 4, 2)),
        ("39B (8,2,2)", gpt(39_000_000_000, 48, 64, 8192, 2048, 96), (8, 2, 2)),
        ("76B (4,8,2)", gpt(76_000_000_000, 64, 80, 10240, 2048, 128), (4, 8, 2)),
        ("145B (8,8,1)", gpt(145_000_000_000, 80, 96, 12288, 2048, 96), (8, 8, 1)),
    ];
    let mut all = true;
    let mut parts = Vec::new();
    for (name, model, (t, p, d)) in rows {
        let par = ParallelismConfig::new(p, t, d, 1);
        let platform = hopper(t * p * d / 8, 8);
        let derived = validate_layout(&model, &par).unwrap();
        let mapping = map_ranks(&par, &platform, true).unwrap();
        let matrix = build_traffic_matrix(&model, &par, &derived, &mapping, &TrafficOptions::default()).unwrap();
        let share = matrix.share(TrafficClass::Tp);
        all &= share > 0.99;
        parts.push(format!("{name} {:.2}%", 100.0 * share));
    }
    outcome(all, parts.join(", "))
}

// Exact ring-edge volume per group.
fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let mut bad = 0;
    let mut groups = 0;
    for i in 0..500 {
        if i % 2 == 0 {
            // Bare renderer on arbitrary member sets and payloads.
            let k = rng.random_range(2..=32usize);
            let mut members: Vec<usize> = (0..64).collect();
            for j in (1..members.len()).rev() {
                members.swap(j, rng.random_range(0..=j));
            }
            members.truncate(k);
            let payload = rng.random_range(1..=1u64 << 40);
            let sum: u128 = RingAllReduce.allreduce_edges(&members, payload).iter().map(|e| e.2 as u128).sum();
            groups += 1;
            bad += usize::from(sum * k as u128 != k as u128 * payload as u128 * 2 * (k as u128 - 1));
            continue;
        }
        // Whole matrices: every TP and DP group sums to its ring volume.
        let (mut model, mut par) = random_valid(&mut rng);
        model.kind = ModelKind::DenseGpt;
        par.ep = 1;
        let gpm = pick(&mut rng, &[1, 2, 4, 8]);
        let gpus = par.gpu_count();
        let platform = if gpus < gpm {
            hopper(1, gpus)
        } else if gpus % gpm == 0 {
            hopper(gpus / gpm, gpm)
        } else {
            hopper(gpus, 1)
        };
        let derived = validate_layout(&model, &par).unwrap();
        let mapping = map_ranks(&par, &platform, false).unwrap();
        let recompute = rng.random_bool(0.5);
        let matrix =
            build_traffic_matrix(&model, &par, &derived, &mapping, &TrafficOptions { recompute, k_active: None })
                .unwrap();
        let ops = derived.micro_batches * derived.layers_per_stage * if recompute { 6 } else { 4 };
        let act = model.precision_bytes * par.micro_batch * model.seq_len * model.hidden;
        let dp_payload = model.precision_bytes * model.params / (par.pp * par.tp);
        let check = |class, members: &[usize], payload: u64, times: u64| -> bool {
            let k = members.len() as u128;
            let sum: u128 = members
                .iter()
                .flat_map(|&a| members.iter().map(move |&b| (a, b)))
                .map(|(a, b)| matrix.get(class, a, b) as u128)
                .sum();
            k < 2 || sum * k == k * payload as u128 * times as u128 * 2 * (k - 1)
        };
        for g in 0..mapping.tp_group_count() {
            groups += 1;
            bad += usize::from(!check(TrafficClass::Tp, &mapping.tp_group(g), act, ops));
        }
        for g in 0..mapping.dp_group_count() {
            groups += 1;
            bad += usize::from(!check(TrafficClass::Dp, &mapping.dp_group(g), dp_payload, 1));
        }
    }
    outcome(bad == 0, format!("500 configurations, {groups} groups, {bad} violations"))
}

// Bandwidth homogeneity and vanishing phases.
fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut bad = Vec::new();
    for _ in 0..1000 {
        let (model, par) = random_valid(&mut rng);
        let derived = validate_layout(&model, &par).unwrap();
        let c = 10f64.powf(rng.random_range(8.0..12.0));
        let recompute = rng.random_bool(0.5);
        let overlap = pick(&mut rng, &[0.0, 0.5]);
        let tp = tp_time(&model, &par, &derived, c, recompute);
        let tp2 = tp_time(&model, &par, &derived, 2.0 * c, recompute);
        if tp2.0 != tp.0 / 2.0 || tp2.1 != tp.1 / 2.0 {
            bad.push("tp");
        }
        let pp = pp_time(&model, &par, &derived, c);
        let pp2 = pp_time(&model, &par, &derived, 2.0 * c);
        if pp2.0 != pp.0 / 2.0 || pp2.1 != pp.1 / 2.0 {
            bad.push("pp");
        }
        if dp_time(&model, &par, 2.0 * c, overlap) != dp_time(&model, &par, c, overlap) / 2.0 {
            bad.push("dp");
        }
        if model.kind == ModelKind::Moe && par.ep > 1 {
            let a = alltoall_time(&model, par.ep, c, 1, recompute).unwrap();
            if alltoall_time(&model, par.ep, 2.0 * c, 1, recompute).unwrap() != a / 2.0 {
                bad.push("ata");
            }
        }
        let opts = CostOptions { recompute, k_active: None, dp_overlap: overlap };
        let bw = random_bandwidths(&mut rng);
        let full = iteration(&model, &par, &derived, &bw, 989e12, 0.5, &opts).unwrap();
        if par.tp == 1 && full.t_tp != 0.0 {
            bad.push("t=1");
        }
        if par.pp == 1 && (full.t_pp != 0.0 || full.t_bubble != 0.0) {
            bad.push("p=1");
        }
        if par.dp == 1 && full.t_dp != 0.0 {
            bad.push("d=1");
        }
    }
    outcome(
        bad.is_empty(),
        format!("1000 configurations, violations: {}", if bad.is_empty() { "none".into() } else { bad.join(" ") }),
    )
}

// AllToAll sequence relations and uniformity of the expected matrix.
fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=16usize);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..1e9)).collect()).collect();
        let first = AllToAllHeatmap::from_rows(&rows).unwrap();
        let seq = predict_alltoall_sequence(&first);
        let transposed: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| rows[j][i]).collect()).collect();
        bad += usize::from(seq.fw2.rows() != transposed || seq.bw1.rows() != rows || seq.bw2.rows() != transposed);
    }
    let mut max_var: f64 = 0.0;
    for _ in 0..200 {
        let mut model = gpt(
            1_000_000_000,
            8,
            8,
            pick(&mut rng, &[256, 1000, 4096]),
            pick(&mut rng, &[128, 2048]),
            rng.random_range(1..=512),
        );
        model.kind = ModelKind::Moe;
        model.moe_top_k_max = 2;
        let e = rng.random_range(1..=32);
        let heat = expected_alltoall_matrix(&model, e, rng.random_range(1..=2)).unwrap();
        max_var = max_var.max(uniformity_metrics(&heat).1);
    }
    outcome(
        bad == 0 && max_var == 0.0,
        format!("1000 matrices, {bad} relation violations; 200 expected matrices, max variance {max_var}"),
    )
}

fn candidate_memory(model: &ModelSpec, par: &ParallelismConfig) -> f64 {
    MemoryModel::default().bytes_per_gpu(model, par)
}

/// Brute-force argmin over an explicit candidate list.
fn oracle(
    model: &ModelSpec,
    platform: &PlatformSpec,
    profiles: &ProfileSet,
    list: &[ParallelismConfig],
) -> Option<(ParallelismConfig, f64)> {
    let mut best: Option<(ParallelismConfig, f64)> = None;
    for par in list {
        let Ok(pred) = predict(model, par, platform, profiles, &RunOptions::default()) else { continue };
        if candidate_memory(model, par) > platform.gpu_mem_bytes as f64 {
            continue;
        }
        let t = pred.breakdown.t_iter;
        let better = match &best {
            None => true,
            Some((bp, bt)) => {
                t < *bt
                    || (t == *bt && (par.micro_batch, par.tp, par.pp, par.dp) < (bp.micro_batch, bp.tp, bp.pp, bp.dp))
            }
        };
        if better {
            best = Some((*par, t));
        }
    }
    best
}

// Tuner argmin against exhaustive evaluation.
fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let profiles = ProfileSet::bundled();
    let mut mismatches = Vec::new();
    let mut requests = 0;
    let mut total_candidates = 0;
    while requests < 100 {
        let gpus: u64 = pick(&mut rng, &[1, 2, 4, 8, 16]);
        let gpm = pick(&mut rng, &[1, 2, 4, 8]).min(gpus);
        let platform = PlatformSpec { gpu_mem_bytes: 0, ..hopper(gpus / gpm, gpm) };
        let mut model = gpt(
            rng.random_range(100_000_000..20_000_000_000),
            pick(&mut rng, &[8, 16, 24]),
            16,
            pick(&mut rng, &[1024, 4096]),
            pick(&mut rng, &[512, 2048]),
            pick(&mut rng, &[8, 12, 16, 24, 32]),
        );
        model.vocab_size = pick(&mut rng, &[0, 50257]);

        let by_parallelism = rng.random_bool(0.5);
        let mut list = Vec::new();
        let explicit: Vec<u64>;
        let base;
        if by_parallelism {
            base = ParallelismConfig::new(1, 1, gpus, 1);
            explicit = Vec::new();
            for t in 1..=gpus {
                for p in 1..=gpus {
                    if !gpus.is_multiple_of(t * p) {
                        continue;
                    }
                    let d = gpus / (t * p);
                    let mut any = false;
                    for b in 1..=model.global_batch {
                        if model.global_batch.is_multiple_of(d * b) {
                            list.push(ParallelismConfig::new(p, t, d, b));
                            any = true;
                        }
                    }
                    if !any {
                        list.push(ParallelismConfig::new(p, t, d, 1));
                    }
                }
            }
        } else {
            let t = pick(&mut rng, &(1..=gpus).filter(|t| gpus.is_multiple_of(*t)).collect::<Vec<_>>());
            let p = pick(&mut rng, &(1..=gpus / t).filter(|p| (gpus / t).is_multiple_of(*p)).collect::<Vec<_>>());
            base = ParallelismConfig::new(p, t, gpus / (t * p), 1);
            let mut set: BTreeSet<u64> = BTreeSet::new();
            for _ in 0..rng.random_range(1..=10) {
                set.insert(rng.random_range(1..=16));
            }
            explicit = set.into_iter().collect();
            list = explicit.iter().map(|&b| ParallelismConfig { micro_batch: b, ..base }).collect();
        }
        if list.is_empty() || list.len() > 64 {
            continue;
        }
        // Memory between the smallest and largest candidate need, so some
        // requests exclude candidates.
        let mems: Vec<f64> = list.iter().map(|c| candidate_memory(&model, c)).collect();
        let lo = mems.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mems.iter().cloned().fold(0.0, f64::max);
        let platform =
            PlatformSpec { gpu_mem_bytes: (lo + rng.random_range(0.0..=1.2) * (hi - lo)).ceil() as u64, ..platform };

        requests += 1;
        total_candidates += list.len();
        let ctx = TuneContext {
            model: &model,
            platform: &platform,
            profiles: &profiles,
            options: RunOptions::default(),
            memory: MemoryModel::default(),
        };
        let tuned =
            if by_parallelism { tune_parallelism(&ctx, &base) } else { tune_micro_batch(&ctx, &base, Some(&explicit)) };
        let want = oracle(&model, &platform, &profiles, &list);
        let agree = match (&tuned, &want) {
            (Ok(r), Some((par, t))) => {
                let got = r.best();
                got.parallel == *par && got.t_iter() == *t && r.evaluated() == list.len()
            }
            (Err(_), None) => true,
            _ => false,
        };
        if !agree {
            mismatches.push(format!("request {requests}"));
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "100 requests, {total_candidates} candidates, {} disagreements {}",
            mismatches.len(),
            mismatches.join(" ")
        ),
    )
}

fn flat_profiles(mu_of_b: impl Fn(u64) -> f64) -> ProfileSet {
    let mut bw = Vec::new();
    for op in [OpKind::P2p, OpKind::Allreduce, OpKind::Alltoall] {
        for locality in [Locality::Intra, Locality::Inter] {
            bw.push(BandwidthRecord {
                op,
                locality,
                topology: Topology::Nvswitch,
                scale: ANY_SCALE,
                msg_bytes: 1,
                bw_bytes_per_s: 5e10,
            });
        }
    }
    let util = (1..=64).map(|b| UtilizationRecord { params_per_gpu: 1e9, micro_batch: b, mu: mu_of_b(b) });
    ProfileSet { bandwidth: ingest_bandwidth(bw).unwrap(), utilization: ingest_utilization(util).unwrap() }
}

// Scaling factor per replica flattens as the per-replica batch shrinks.
fn criterion_9() -> Outcome {
    let profiles = flat_profiles(|b| 0.7 * b as f64 / (b as f64 + 2.0));
    let model = gpt(8_000_000_000, 32, 32, 4096, 2048, 64);
    let platform = PlatformSpec { gpu_mem_bytes: u64::MAX / 2, ..hopper(1, 8) };
    let ctx = TuneContext {
        model: &model,
        platform: &platform,
        profiles: &profiles,
        options: RunOptions::default(),
        memory: MemoryModel::default(),
    };
    let base = ParallelismConfig::new(4, 2, 1, 1);
    let dps: Vec<u64> = (0..7).map(|i| 1 << i).collect();
    let rates = CostRates { token_budget: 1e11, rent_rate: 2.0, gpu_price: 25_000.0 };
    let report = match scale_analysis(&ctx, &base, &dps, rates, false) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let per_replica: Vec<f64> =
        report.points.iter().map(|p| p.scaling_factor.unwrap_or(f64::NAN) / p.dp as f64).collect();
    let monotone = per_replica.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let unit = per_replica.first().is_some_and(|f| (f - 1.0).abs() <= 1e-12);
    let shown: Vec<String> =
        report.points.iter().zip(&per_replica).map(|(p, f)| format!("d={} {f:.4}", p.dp)).collect();
    outcome(monotone && unit, format!("scaling_factor/d: {}", shown.join(", ")))
}

fn bandwidth_round_trip(profile: &trainperf_core::profiles::BandwidthProfile) -> bool {
    let mut buf = Vec::new();
    profile.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    match parse_profile_csv(&text, &ColumnDefaults::default()) {
        Ok(ProfileDocument::Bandwidth(r)) => ingest_bandwidth(r).is_ok_and(|p| &p == profile),
        _ => false,
    }
}

fn utilization_round_trip(profile: &trainperf_core::profiles::UtilizationProfile) -> bool {
    let mut buf = Vec::new();
    profile.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    match parse_profile_csv(&text, &ColumnDefaults::default()) {
        Ok(ProfileDocument::Utilization(r)) => ingest_utilization(r).is_ok_and(|p| &p == profile),
        _ => false,
    }
}

// Profile round trip; hardware-only results listed as narrative fixtures.
fn criterion_10() -> Outcome {
    let mut rng = StdRng::seed_from_u64(10);
    let mut ok =
        bandwidth_round_trip(&default_bandwidth_profile()) && utilization_round_trip(&default_utilization_profile());
    for _ in 0..100 {
        let records: Vec<BandwidthRecord> = (0..rng.random_range(1..40))
            .map(|_| BandwidthRecord {
                op: pick(&mut rng, &[OpKind::P2p, OpKind::Allreduce, OpKind::Alltoall]),
                locality: pick(&mut rng, &[Locality::Intra, Locality::Inter]),
                topology: pick(&mut rng, &[Topology::Pcie, Topology::Nvlink, Topology::Nvswitch]),
                scale: rng.random_range(0..=16),
                msg_bytes: rng.random_range(1..=1u64 << 34),
                bw_bytes_per_s: rng.random_range(1e6..1e12),
            })
            .collect();
        ok &= bandwidth_round_trip(&ingest_bandwidth(records).unwrap());
        let util: Vec<UtilizationRecord> = (0..rng.random_range(1..40))
            .map(|_| UtilizationRecord {
                params_per_gpu: rng.random_range(1e6..1e11),
                micro_batch: rng.random_range(1..=64),
                mu: rng.random_range(0.01..1.0),
            })
            .collect();
        ok &= utilization_round_trip(&ingest_utilization(util).unwrap());
    }

    let narrative: toml::Table = include_str!("fixtures/narrative.toml").parse().expect("fixture parses");
    let claims = narrative["claim"].as_array().map_or(0, |a| a.len());
    for claim in narrative["claim"].as_array().into_iter().flatten() {
        println!(
            "       narrative {}: {} ({})",
            claim["id"].as_str().unwrap_or("?"),
            claim["value"].as_str().unwrap_or("?"),
            claim["needs"].as_str().unwrap_or("?")
        );
    }
    // A config file echoes itself exactly as well.
    let config = ConfigFile {
        model: gpt(145_000_000_000, 80, 96, 12288, 2048, 2304),
        parallel: ParallelismConfig::new(8, 8, 1, 3),
        platform: hopper(8, 8),
        options: RunOptions::default(),
    };
    ok &= ConfigFile::from_toml_str(&config.to_toml_string()).is_ok_and(|c| c == config);
    outcome(
        ok && claims == 4,
        format!(
            "bundled and 200 random profiles round-trip {}; {claims} narrative fixtures",
            if ok { "exactly" } else { "with differences" }
        ),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("bubble closed form vs simulator", criterion_1),
        ("dual assembly identity", criterion_2),
        ("traffic matrix structure (4,2,4)", criterion_3),
        ("TP volume dominance", criterion_4),
        ("ring volume conservation", criterion_5),
        ("bandwidth homogeneity", criterion_6),
        ("MoE AllToAll relations", criterion_7),
        ("tuner matches brute force", criterion_8),
        ("scaling trend", criterion_9),
        ("profile round trip", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        failed += usize::from(!r.pass);
        println!("{} {:>2} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, i + 1, r.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
