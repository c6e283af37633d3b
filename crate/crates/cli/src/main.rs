use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trainperf_core::config::{ConfigFile, MemoryModel, ModelKind, Topology};
use trainperf_core::cost::predict;
use trainperf_core::profiles::{
    ingest_bandwidth, ingest_utilization, parse_profile_csv, ColumnDefaults, Locality, OpKind, ProfileDocument,
    ProfileSet, DEFAULTS_LABEL,
};
use trainperf_core::report;
use trainperf_core::sim::{chrome_trace, simulate, SimInput};
use trainperf_core::traffic::{
    build_traffic_matrix, map_ranks, onoff_timeline, BlockDurations, TrafficClass, TrafficOptions,
};
use trainperf_core::tuner::{scale_analysis, tune_micro_batch, tune_parallelism, CostRates, TuneContext};

#[derive(Parser)]
#[command(
    name = "trainperf",
    version,
    about = "Iteration-time prediction and configuration search for hybrid-parallel LLM training"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Model, parallelism and platform description (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Profile CSV overlaid on the bundled defaults; later files win.
    #[arg(long, global = true, value_name = "PATH")]
    profile: Vec<PathBuf>,
    /// Directory for output files. Reports also go to stdout.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Fail instead of warning when a TP group spans machines.
    #[arg(long, global = true)]
    strict_mapping: bool,
    /// Disable activation recomputation.
    #[arg(long, global = true)]
    no_recompute: bool,
    /// Model chunks per GPU (interleaved 1F1B).
    #[arg(long, global = true, value_name = "V")]
    interleave: Option<u64>,
    /// Experts per token for MoE models.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=2))]
    k_active: Option<u64>,
    /// Training tokens for scale-analysis.
    #[arg(long, global = true, value_name = "N")]
    token_budget: Option<f64>,
    /// Rent per GPU-hour.
    #[arg(long, global = true, value_name = "X", default_value_t = 0.0)]
    rent_rate: f64,
    /// Purchase price per GPU.
    #[arg(long, global = true, value_name = "Y", default_value_t = 0.0)]
    gpu_price: f64,
    /// `csv`: TOML reports and CSV tables. `txt`: aligned text tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Txt,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the iteration time of the configured layout.
    Predict,
    /// Write the per-class communication matrices.
    Heatmap,
    /// Write the On-Off communication pattern of one rank.
    Timeline,
    /// Simulate the pipeline schedule and write a Chrome trace.
    Sim {
        /// Use unit forward compute and no communication.
        #[arg(long)]
        uniform: bool,
    },
    /// Pick the micro-batch size for the configured layout.
    TuneMicrobatch {
        /// Candidate sizes; defaults to every divisor of the per-replica batch.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<u64>>,
    },
    /// Search every (t, p, d) factorization of the platform.
    TuneParallelism,
    /// Sweep the DP degree over powers of two at fixed global batch.
    ScaleAnalysis {
        #[arg(long, default_value_t = 1)]
        dp_min: u64,
        /// Defaults to the configured DP degree.
        #[arg(long)]
        dp_max: Option<u64>,
        /// Also search the (t, p) split of each GPU count.
        #[arg(long)]
        cross_product: bool,
    },
    /// Validate benchmark output and write it as a native profile CSV.
    IngestProfile {
        #[arg(required = true, value_name = "INPUT")]
        inputs: Vec<PathBuf>,
        /// Locality for logs without a locality column.
        #[arg(long)]
        locality: Option<Locality>,
        /// Topology for logs without a topology column.
        #[arg(long)]
        topology: Option<Topology>,
        /// Collective for logs without an op column.
        #[arg(long)]
        op: Option<OpKind>,
    },
    /// Write the bundled bandwidth and utilization profiles.
    ShowDefaults,
}

/// A failed run: `code` 1 for domain errors, 2 for usage errors.
#[derive(Debug)]
struct Failure {
    code: u8,
    name: String,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, name: "Usage".into(), message: message.into() }
    }

    fn domain(name: &str, err: impl std::fmt::Display) -> Self {
        Failure { code: 1, name: name.into(), message: err.to_string() }
    }
}

macro_rules! domain {
    ($e:expr) => {
        $e.map_err(|err| Failure::domain(err.name(), &err))
    };
}

/// Output of one run, written only once everything has been computed.
struct Output {
    files: Vec<(String, String)>,
    stdout: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli).and_then(|out| write(&cli.global.out, out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write(dir: &Path, out: Output) -> Result<(), Failure> {
    if !out.files.is_empty() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::domain("OutputIo", format!("{}: {e}", dir.display())))?;
    }
    for (name, content) in &out.files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Failure::domain("OutputIo", format!("{}: {e}", path.display())))?;
    }
    print!("{}", out.stdout);
    Ok(())
}

fn load_config(g: &Global) -> Result<ConfigFile, Failure> {
    let path = g.config.as_ref().ok_or_else(|| Failure::usage("this subcommand requires --config PATH"))?;
    let mut config = domain!(ConfigFile::load(path))?;
    if g.strict_mapping {
        config.options.strict_mapping = true;
    }
    if g.no_recompute {
        config.options.recompute = false;
    }
    if let Some(v) = g.interleave {
        config.parallel.interleave = v;
    }
    if let Some(k) = g.k_active {
        config.options.k_active = Some(k);
    }
    Ok(config)
}

fn load_profiles(g: &Global) -> Result<ProfileSet, Failure> {
    let mut set = ProfileSet::bundled();
    for path in &g.profile {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::domain("ProfileIo", format!("{}: {e}", path.display())))?;
        let doc = domain!(parse_profile_csv(&text, &ColumnDefaults::default()))?;
        domain!(set.apply(doc))?;
    }
    Ok(set)
}

fn with_header(provenance: &str, body: &[u8]) -> String {
    format!("# {provenance}\n{}", String::from_utf8_lossy(body))
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::IngestProfile { inputs, locality, topology, op } => {
            ingest(inputs, ColumnDefaults { locality: *locality, topology: *topology, op: *op })
        }
        Command::ShowDefaults => {
            let set = ProfileSet::bundled();
            let prov = format!("{} ({DEFAULTS_LABEL})", report::provenance(&report::input_digest::<&str>(&[])));
            let mut bw = Vec::new();
            set.bandwidth.write_csv(&mut bw).expect("writing to memory");
            let mut util = Vec::new();
            set.utilization.write_csv(&mut util).expect("writing to memory");
            Ok(Output {
                files: vec![
                    ("default_bandwidth.csv".into(), with_header(&prov, &bw)),
                    ("default_utilization.csv".into(), with_header(&prov, &util)),
                ],
                stdout: format!(
                    "{DEFAULTS_LABEL}: {} bandwidth records, {} utilization records\n",
                    set.bandwidth.len(),
                    set.utilization.len()
                ),
            })
        }
        command => {
            let config = load_config(g)?;
            let profiles = load_profiles(g)?;
            configured(command, g, &config, &profiles)
        }
    }
}

fn ingest(inputs: &[PathBuf], defaults: ColumnDefaults) -> Result<Output, Failure> {
    let mut bandwidth = Vec::new();
    let mut utilization = Vec::new();
    let mut texts = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::domain("ProfileIo", format!("{}: {e}", path.display())))?;
        match domain!(parse_profile_csv(&text, &defaults))? {
            ProfileDocument::Bandwidth(r) => bandwidth.extend(r),
            ProfileDocument::Utilization(r) => utilization.extend(r),
        }
        texts.push(text);
    }
    let digest = report::input_digest(&texts);
    let prov = report::provenance(&digest);
    let mut files = Vec::new();
    let mut stdout = String::new();
    if !bandwidth.is_empty() {
        let profile = domain!(ingest_bandwidth(bandwidth))?;
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).expect("writing to memory");
        files.push(("bandwidth_profile.csv".to_string(), with_header(&prov, &buf)));
        stdout += &format!("bandwidth: {} records in {} curves\n", profile.len(), profile.keys().count());
    }
    if !utilization.is_empty() {
        let profile = domain!(ingest_utilization(utilization))?;
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).expect("writing to memory");
        files.push(("utilization_profile.csv".to_string(), with_header(&prov, &buf)));
        stdout += &format!("utilization: {} records\n", profile.len());
    }
    Ok(Output { files, stdout })
}

fn configured(command: &Command, g: &Global, config: &ConfigFile, profiles: &ProfileSet) -> Result<Output, Failure> {
    let (model, par, platform, opts) = (&config.model, &config.parallel, &config.platform, &config.options);
    let digest_with = |extra: &[String]| report::config_digest(config, profiles, extra);
    let ctx = TuneContext { model, platform, profiles, options: *opts, memory: MemoryModel::default() };
    let txt = g.format == Format::Txt;
    let single = |name: &str, text: String| Output { files: vec![(name.to_string(), text.clone())], stdout: text };

    match command {
        Command::Predict => {
            let pred = domain!(predict(model, par, platform, profiles, opts))?;
            let digest = digest_with(&[]);
            Ok(if txt {
                single("prediction.txt", report::prediction_text(&pred, &digest))
            } else {
                single("prediction.toml", report::prediction_toml(config, &pred, &digest))
            })
        }
        Command::Heatmap => {
            let derived = domain!(config.validate())?;
            let mapping = domain!(map_ranks(par, platform, opts.strict_mapping))?;
            let topts = TrafficOptions { recompute: opts.recompute, k_active: opts.k_active };
            let matrix = domain!(build_traffic_matrix(model, par, &derived, &mapping, &topts))?;
            let prov = report::provenance(&digest_with(&["heatmap".into()]));
            let mut files = Vec::new();
            let mut stdout = String::new();
            for class in TrafficClass::ALL {
                if class == TrafficClass::Ata && model.kind != ModelKind::Moe {
                    continue;
                }
                let mut buf = Vec::new();
                matrix.write_class_csv(class, &mut buf).expect("writing to memory");
                files.push((format!("traffic_{class}.csv"), with_header(&prov, &buf)));
                stdout += &format!(
                    "{class:<8} {:>6} pairs {:>22} bytes {:>8.4} %\n",
                    matrix.nonzero_count(class),
                    matrix.class_total(class),
                    100.0 * matrix.share(class)
                );
            }
            if mapping.inter_machine_tp {
                stdout += "warning: TP groups span machines\n";
            }
            Ok(Output { files, stdout })
        }
        Command::Timeline => {
            let pred = domain!(predict(model, par, platform, profiles, opts))?;
            let c = &pred.breakdown;
            let durations = BlockDurations { comp_mb: c.t_comp_mb, tp_mb: c.t_tp_mb, pp_mb: c.t_pp_mb };
            let tl = domain!(onoff_timeline(&pred.derived, durations, opts.recompute))?;
            let prov = report::provenance(&digest_with(&["timeline".into()]));
            let mut buf = Vec::new();
            tl.write_csv(&mut buf).expect("writing to memory");
            let stdout = format!(
                "{} segments, {} on-blocks, on-time {:.6} s of {:.6} s\n",
                tl.segments.len(),
                tl.on_blocks(),
                tl.on_time(),
                tl.end()
            );
            Ok(Output { files: vec![("timeline.csv".into(), with_header(&prov, &buf))], stdout })
        }
        Command::Sim { uniform } => {
            let derived = domain!(config.validate())?;
            let (p, m, v) = (par.pp as usize, derived.micro_batches as usize, par.interleave as usize);
            let input = if *uniform {
                SimInput::uniform(p, m, v, 1.0)
            } else {
                let pred = domain!(predict(model, par, platform, profiles, opts))?;
                SimInput::from_breakdown(p, m, v, &pred.breakdown, opts.recompute)
            };
            let result = domain!(simulate(&input))?;
            let digest = digest_with(&[format!("sim uniform={uniform}")]);
            let prov = report::provenance(&digest);
            let trace = chrome_trace(&result, &prov);
            let closed = (p as f64 - 1.0) / (p as f64 - 1.0 + m as f64) / v as f64;
            let summary = if txt {
                format!(
                    "# {prov}\niteration_time {:.9}\nbubble_ratio   {:.9}\nidle_time      {:.9}\nclosed_form    {closed:.9}\n",
                    result.iteration_time, result.bubble_ratio, result.idle_time
                )
            } else {
                format!(
                    "# {prov}\n[sim]\np = {p}\nm = {m}\nv = {v}\nuniform = {uniform}\niteration_time = {:?}\nbubble_ratio = {:?}\nidle_time = {:?}\nclosed_form_ratio = {closed:?}\n",
                    result.iteration_time, result.bubble_ratio, result.idle_time
                )
            };
            let name = if txt { "sim_summary.txt" } else { "sim_summary.toml" };
            let trace_text = serde_json::to_string_pretty(&trace).expect("trace serializes") + "\n";
            Ok(Output {
                files: vec![(name.into(), summary.clone()), ("sim_trace.json".into(), trace_text)],
                stdout: summary,
            })
        }
        Command::TuneMicrobatch { candidates } => {
            let extra = format!("tune-microbatch {candidates:?}");
            let report = domain!(tune_micro_batch(&ctx, par, candidates.as_deref()))?;
            let digest = digest_with(&[extra]);
            Ok(if txt {
                single("tune_microbatch.txt", report::tune_text(&report, &digest))
            } else {
                single("tune_microbatch.toml", report::tune_toml("micro_batch", &report, &digest))
            })
        }
        Command::TuneParallelism => {
            let report = domain!(tune_parallelism(&ctx, par))?;
            let digest = digest_with(&["tune-parallelism".into()]);
            Ok(if txt {
                single("tune_parallelism.txt", report::tune_text(&report, &digest))
            } else {
                single("tune_parallelism.toml", report::tune_toml("parallelism", &report, &digest))
            })
        }
        Command::ScaleAnalysis { dp_min, dp_max, cross_product } => {
            let token_budget =
                g.token_budget.ok_or_else(|| Failure::usage("scale-analysis requires --token-budget N"))?;
            let dp_max = dp_max.unwrap_or(par.dp);
            if *dp_min == 0 || dp_max < *dp_min {
                return Err(Failure::usage(format!("empty DP range {dp_min}..={dp_max}")));
            }
            let dps: Vec<u64> = (0..64).map(|i| 1u64 << i).filter(|d| (*dp_min..=dp_max).contains(d)).collect();
            if dps.is_empty() {
                return Err(Failure::usage(format!("no power of two in {dp_min}..={dp_max}")));
            }
            let rates = CostRates { token_budget, rent_rate: g.rent_rate, gpu_price: g.gpu_price };
            let report = domain!(scale_analysis(&ctx, par, &dps, rates, *cross_product))?;
            let digest = digest_with(&[format!("scale-analysis {dps:?} {rates:?} {cross_product}")]);
            let prov = report::provenance(&digest);
            if txt {
                Ok(single("scale_analysis.txt", report::scale_text(&report, &digest)))
            } else {
                let mut buf = Vec::new();
                report.write_csv(&mut buf).expect("writing to memory");
                let toml = report::scale_toml(&report, &digest);
                Ok(Output {
                    files: vec![
                        ("scale_analysis.csv".into(), with_header(&prov, &buf)),
                        ("scale_analysis.toml".into(), toml.clone()),
                    ],
                    stdout: toml,
                })
            }
        }
        Command::IngestProfile { .. } | Command::ShowDefaults => unreachable!("handled without a config"),
    }
}
