//! Command-line front end.
//!
//! Every command renders its artifacts in memory first, then writes them,
//! so the same bytes can be digested into a run manifest and compared on
//! `rerun`. Nothing reads the clock or ambient entropy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::engine::{
    run_variants, simulate, simulate_scheduler, BinMode, ComparisonRow, DynamicStream, Scheduler,
    SimConfig, SimResult, Strategy, Variant, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::grpo::{
    aggregate_micro, compute_advantages, compute_rewards, full_objective, micro_objective,
    parse_scores, AdvantageMode, GrpoConfig, KlMode,
};
use crate::memory::{scaling_csv, scaling_report, KvModel};
use crate::planner::{fptas_plan, DEFAULT_EXACT_MAX_JOBS};
use crate::trace::{
    generate_trace, load_trace, predict_lengths, LengthDist, PredictorConfig, Trace,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(
    name = "infsample",
    version,
    about = "Grouped-sampling scheduler and decoding-step simulator"
)]
pub struct Cli {
    /// Result encoding.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Write a run manifest (argv, resolved config, seeds, digests) here.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic length trace.
    GenTrace(GenTraceArgs),
    /// Export the FPTAS group plan for a trace.
    Plan(PlanArgs),
    /// Simulate one strategy on a trace.
    Simulate(SimulateArgs),
    /// Compare strategies and scheduler variants on one trace.
    Compare(CompareArgs),
    /// Peak KV bytes of full versus micro-group decoding across group sizes.
    Memory(MemoryArgs),
    /// Evaluate the clipped group-relative objective from score files.
    Objective(ObjectiveArgs),
    /// Re-run a command from its manifest and check the outputs are identical.
    Rerun(RerunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenTrace(_) => "gen-trace",
            Command::Plan(_) => "plan",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
            Command::Memory(_) => "memory",
            Command::Objective(_) => "objective",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenTraceArgs {
    /// `lognormal:MU:SIGMA`, `uniform:LO:HI` or `bimodal:SHORT:LONG:P`.
    #[arg(long, default_value = "lognormal:5.0:0.6")]
    pub dist: String,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_len: u64,
    #[arg(long, default_value_t = 0)]
    pub prompt_len: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by every command that schedules a trace.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SimFlags {
    #[arg(long)]
    pub trace: PathBuf,
    /// Group size G; defaults to the trace length and must match it.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Concurrent slots g.
    #[arg(long, default_value_t = 4)]
    pub micro_size: usize,
    /// FPTAS accuracy; smaller is finer.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// `oracle`, `noisy:SIGMA`, `constant:VALUE`, or `file` (pred_len column).
    #[arg(long, default_value = "oracle")]
    pub predictor: String,
    /// Tokens decoded before predicting.
    #[arg(long, default_value_t = 0)]
    pub prefix_k: u64,
    /// Seeds predictor noise and the dynamic candidate stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave prefix-phase steps out of total_steps.
    #[arg(long)]
    pub exclude_prefix_steps: bool,
    /// Do not count paused prefixes as held KV.
    #[arg(long)]
    pub drop_prefix_kv: bool,
    /// Partition into N micro groups or into g slot queues.
    #[arg(long, default_value = "groups")]
    pub bin_mode: String,
    /// Dynamic-slot candidates past the trace: `resample` or `cycle`.
    #[arg(long, default_value = "resample")]
    pub dynamic_stream: String,
    /// Largest group solved exactly by the oracle; bigger ones use LPT.
    #[arg(long, default_value_t = DEFAULT_EXACT_MAX_JOBS)]
    pub exact_max_jobs: usize,
}

impl SimFlags {
    fn predictor_config(&self) -> Result<PredictorConfig> {
        let mut p = PredictorConfig::parse_kind(&self.predictor)?;
        p.prefix_k = self.prefix_k;
        p.seed = self.seed;
        Ok(p)
    }

    fn sim_config(&self, trace: &Trace, strategy: Strategy) -> Result<SimConfig> {
        let group_size = self.group_size.unwrap_or(trace.len());
        let mut cfg = SimConfig::new(strategy, group_size, self.micro_size);
        cfg.epsilon = self.epsilon;
        cfg.predictor = self.predictor_config()?;
        cfg.count_prefix_steps = !self.exclude_prefix_steps;
        cfg.retain_prefix_kv = !self.drop_prefix_kv;
        cfg.bin_mode = self.bin_mode.parse::<BinMode>()?;
        cfg.dynamic_stream = self.dynamic_stream.parse::<DynamicStream>()?;
        cfg.dynamic_stream_seed = self.seed;
        cfg.exact_oracle_max_jobs = self.exact_max_jobs;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    /// full, naive, fixed, dynamic, infinite or oracle.
    #[arg(long, default_value = "infinite")]
    pub strategy: String,
    /// Include the per-step schedule log in json-lines output.
    #[arg(long)]
    pub with_log: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    /// Comma-separated strategies. Ratios are against `naive` when listed,
    /// otherwise against the first row.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Comma-separated fixed-slot variants: fifo (trace-order start and
    /// refill), fptas-only (static plan order with FIFO refill), sjf-only
    /// (trace-order start with SJF refill), infinite (plan-order start with
    /// SJF refill).
    #[arg(long)]
    pub schedulers: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MemoryArgs {
    /// key=value file: layers, kv_heads, head_dim, bytes_per_element,
    /// weight_bytes, prompt_len.
    #[arg(long)]
    pub model_config: PathBuf,
    #[arg(long, default_value = "8,16,32")]
    pub group_sizes: String,
    #[arg(long, default_value = "1,2,4")]
    pub micro_sizes: String,
    /// Use the first G samples of this trace for each group size.
    #[arg(long, conflicts_with = "dist")]
    pub trace: Option<PathBuf>,
    /// Generate a fresh trace per group size instead.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long, default_value_t = 1024)]
    pub max_len: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ObjectiveArgs {
    /// Per-token CSV: sample_id,logp_new,logp_old,logp_ref.
    #[arg(long)]
    pub tokens: PathBuf,
    /// Per-sample CSV: sample_id,rm_score.
    #[arg(long)]
    pub rewards: PathBuf,
    /// Samples per micro group; must divide the group.
    #[arg(long, default_value_t = 1)]
    pub micro_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub clip_eps: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// std_norm or mean_only.
    #[arg(long, default_value = "std_norm")]
    pub advantage_mode: String,
    /// k3 or logdiff.
    #[arg(long, default_value = "k3")]
    pub kl_mode: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RerunArgs {
    pub manifest_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// `-` stands for standard output.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a command bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("manifest: {e}"),
        })
    }
}

/// Rendered results of one command, not yet written.
struct Execution {
    /// `None` means standard output.
    outputs: Vec<(Option<PathBuf>, String)>,
    /// Human-readable note for standard error.
    summary: Option<String>,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
}

impl Execution {
    fn new(config: Value) -> Self {
        Execution {
            outputs: Vec::new(),
            summary: None,
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn parse_list<T: std::str::FromStr>(field: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::config(field, format!("bad list element `{s}`")))
        })
        .collect()
}

fn ratio(x: f64) -> String {
    format!("x{x:.2}")
}

fn json_line(value: &impl Serialize) -> String {
    let mut line = serde_json::to_string(value).expect("serializable");
    line.push('\n');
    line
}

fn run_gen_trace(args: &GenTraceArgs) -> Result<Execution> {
    let dist: LengthDist = args.dist.parse()?;
    let trace = generate_trace(&dist, args.count, args.max_len, args.prompt_len, args.seed)?;
    let mut exec = Execution::new(json!({ "args": args, "dist": dist }));
    exec.seeds.insert("trace".into(), args.seed);
    exec.summary = Some(format!(
        "count={} mean={:.2} max={}",
        trace.len(),
        trace.mean_len(),
        trace.max_len()
    ));
    exec.outputs.push((Some(args.out.clone()), trace.to_csv()));
    Ok(exec)
}

fn load_sim_input(flags: &SimFlags, exec: &mut Execution) -> Result<Trace> {
    exec.inputs.push(flags.trace.clone());
    exec.seeds.insert("predictor".into(), flags.seed);
    exec.seeds.insert("dynamic_stream".into(), flags.seed);
    load_trace(&flags.trace)
}

fn run_plan(args: &PlanArgs, format: Format) -> Result<Execution> {
    let mut exec = Execution::new(json!({ "args": args }));
    let trace = load_sim_input(&args.sim, &mut exec)?;
    let cfg = args.sim.sim_config(&trace, Strategy::Infinite)?;
    cfg.validate()?;
    let predicted = predict_lengths(&trace, &cfg.predictor)?;
    let preds: Vec<u64> = predicted
        .samples
        .iter()
        .map(|s| s.pred_len.unwrap_or(0))
        .collect();
    let bins = match cfg.bin_mode {
        BinMode::Groups => cfg.n_groups(),
        BinMode::Slots => cfg.micro_size,
    };
    let plan = fptas_plan(&preds, bins, cfg.epsilon)?;
    exec.config = json!({ "args": args, "sim": cfg });
    let body = match format {
        Format::Csv => plan.to_csv(),
        Format::JsonLines => (0..preds.len())
            .map(|id| {
                let (group, position) = plan.mask[id];
                json_line(&json!({
                    "id": id,
                    "group": group,
                    "position": position,
                    "pred_len": preds[id],
                    "scaled_len": plan.scaled_lengths[id],
                }))
            })
            .collect(),
    };
    exec.summary = Some(format!(
        "groups={} K={} capacity={} overflow={}",
        plan.n_groups(),
        plan.scale_k,
        plan.capacity,
        plan.overflow_ids.len()
    ));
    exec.outputs.push((args.out.clone(), body));
    Ok(exec)
}

fn simulation_csv(r: &SimResult) -> String {
    let mut out = String::from(
        "strategy,total_steps,avg_len,peak_kv_tokens,completed,discarded,prefix_steps\n",
    );
    let _ = writeln!(
        out,
        "{},{},{:.2},{},{},{},{}",
        r.strategy,
        r.total_steps,
        r.avg_emitted_len,
        r.peak_kv_tokens,
        r.per_sample.len(),
        r.discarded_ids.len(),
        r.prefix_steps
    );
    out
}

fn run_simulate(args: &SimulateArgs, format: Format) -> Result<Execution> {
    let mut exec = Execution::new(json!({ "args": args }));
    let trace = load_sim_input(&args.sim, &mut exec)?;
    let cfg = args.sim.sim_config(&trace, Strategy::Full)?;
    let result = match args.strategy.parse::<Strategy>() {
        Ok(strategy) => simulate(&trace, &cfg.with_strategy(strategy))?,
        Err(e) => match args.strategy.parse::<Scheduler>() {
            Ok(scheduler) => simulate_scheduler(&trace, &cfg, scheduler)?,
            Err(_) => return Err(e),
        },
    };
    exec.config = json!({ "args": args, "sim": cfg });
    let body = match format {
        Format::Csv => simulation_csv(&result),
        Format::JsonLines => {
            let mut line = serde_json::to_string(
                &serde_json::from_str::<Value>(&result.to_json(args.with_log)).expect("valid json"),
            )
            .expect("serializable");
            line.push('\n');
            line
        }
    };
    exec.summary = Some(format!("{}: {} steps", result.strategy, result.total_steps));
    exec.outputs.push((args.out.clone(), body));
    Ok(exec)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("strategy,total_steps,step_ratio,avg_len,len_ratio,peak_kv_tokens\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{},{}",
            r.strategy,
            r.total_steps,
            ratio(r.step_ratio),
            r.avg_emitted_len,
            ratio(r.len_ratio),
            r.peak_kv_tokens
        );
    }
    out
}

fn run_compare(args: &CompareArgs, format: Format) -> Result<Execution> {
    let mut exec = Execution::new(json!({ "args": args }));
    let trace = load_sim_input(&args.sim, &mut exec)?;
    let mut variants: Vec<Variant> = Vec::new();
    let strategies = match (&args.strategies, &args.schedulers) {
        (Some(s), _) => parse_list::<Strategy>("strategies", s)?,
        (None, Some(_)) => Vec::new(),
        (None, None) => Strategy::ALL.to_vec(),
    };
    variants.extend(strategies.into_iter().map(Variant::Strategy));
    if let Some(s) = &args.schedulers {
        variants.extend(
            parse_list::<Scheduler>("schedulers", s)?
                .into_iter()
                .map(Variant::Scheduler),
        );
    }
    let cfg = args.sim.sim_config(&trace, Strategy::Full)?;
    let rows = run_variants(&trace, &cfg, &variants)?;
    exec.config = json!({ "args": args, "sim": cfg });
    let body = match format {
        Format::Csv => comparison_csv(&rows),
        Format::JsonLines => rows.iter().map(json_line).collect(),
    };
    exec.outputs.push((args.out.clone(), body));
    Ok(exec)
}

fn run_memory(args: &MemoryArgs, format: Format) -> Result<Execution> {
    let mut exec = Execution::new(json!({ "args": args }));
    exec.inputs.push(args.model_config.clone());
    let model = KvModel::load(&args.model_config)?;
    let group_sizes = parse_list::<usize>("group_sizes", &args.group_sizes)?;
    let micro_sizes = parse_list::<usize>("micro_sizes", &args.micro_sizes)?;
    let rows = match (&args.trace, &args.dist) {
        (Some(path), _) => {
            exec.inputs.push(path.clone());
            let trace = load_trace(path)?;
            scaling_report(|g| trace.truncated(g), &model, &group_sizes, &micro_sizes)?
        }
        (None, Some(spec)) => {
            let dist: LengthDist = spec.parse()?;
            exec.seeds.insert("trace".into(), args.seed);
            scaling_report(
                |g| generate_trace(&dist, g, args.max_len, model.prompt_len, args.seed),
                &model,
                &group_sizes,
                &micro_sizes,
            )?
        }
        (None, None) => return Err(Error::config("trace", "give either --trace or --dist")),
    };
    exec.config = json!({ "args": args, "model": model });
    let body = match format {
        Format::Csv => scaling_csv(&rows),
        Format::JsonLines => rows
            .iter()
            .map(|r| {
                json_line(&json!({
                    "G": r.group_size,
                    "g": r.micro_size,
                    "strategy": r.strategy,
                    "peak_bytes": r.peak_bytes.to_string(),
                }))
            })
            .collect(),
    };
    exec.outputs.push((args.out.clone(), body));
    Ok(exec)
}

fn run_objective(args: &ObjectiveArgs, format: Format) -> Result<Execution> {
    let mut exec = Execution::new(json!({ "args": args }));
    exec.inputs.push(args.tokens.clone());
    exec.inputs.push(args.rewards.clone());
    let read = |p: &PathBuf| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let samples = parse_scores(&read(&args.tokens)?, &read(&args.rewards)?)?;
    let cfg = GrpoConfig {
        clip_eps: args.clip_eps,
        beta: args.beta,
        advantage_mode: args.advantage_mode.parse::<AdvantageMode>()?,
        kl_mode: args.kl_mode.parse::<KlMode>()?,
    };
    cfg.validate()?;
    if args.micro_size == 0 || samples.len() % args.micro_size != 0 {
        return Err(Error::config(
            "micro_size",
            format!(
                "{} does not divide the group of {}",
                args.micro_size,
                samples.len()
            ),
        ));
    }
    let advantages = compute_advantages(&compute_rewards(&samples, cfg.beta), cfg.advantage_mode);
    let micro: Vec<f64> = samples
        .chunks(args.micro_size)
        .zip(advantages.chunks(args.micro_size))
        .map(|(group, adv)| micro_objective(group, adv, &cfg))
        .collect::<Result<_>>()?;
    let aggregate = aggregate_micro(&micro)?;
    let full = full_objective(&samples, &cfg)?;
    exec.config = json!({ "args": args, "grpo": cfg });

    let mut rows: Vec<(String, f64)> = micro
        .iter()
        .enumerate()
        .map(|(n, &v)| (format!("micro:{n}"), v))
        .collect();
    rows.push(("aggregate".into(), aggregate));
    rows.push(("full".into(), full));
    let body = match format {
        Format::Csv => {
            let mut out = String::from("scope,objective\n");
            for (scope, v) in &rows {
                let _ = writeln!(out, "{scope},{v:e}");
            }
            out
        }
        Format::JsonLines => rows
            .iter()
            .map(|(scope, v)| json_line(&json!({ "scope": scope, "objective": v })))
            .collect(),
    };
    exec.outputs.push((args.out.clone(), body));
    Ok(exec)
}

fn execute(cli: &Cli) -> Result<Execution> {
    match &cli.command {
        Command::GenTrace(a) => run_gen_trace(a),
        Command::Plan(a) => run_plan(a, cli.format),
        Command::Simulate(a) => run_simulate(a, cli.format),
        Command::Compare(a) => run_compare(a, cli.format),
        Command::Memory(a) => run_memory(a, cli.format),
        Command::Objective(a) => run_objective(a, cli.format),
        Command::Rerun(_) => unreachable!("rerun is dispatched separately"),
    }
}

/// Writes an execution's outputs and returns their digests.
fn emit(exec: &Execution, stdout: &mut dyn std::io::Write) -> Result<Vec<FileDigest>> {
    let mut digests = Vec::new();
    for (path, body) in &exec.outputs {
        match path {
            Some(p) => {
                std::fs::write(p, body).map_err(|e| Error::io(p, e))?;
                digests.push(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(body.as_bytes()),
                });
            }
            None => {
                stdout
                    .write_all(body.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e))?;
                digests.push(FileDigest {
                    path: "-".into(),
                    sha256: sha256_hex(body.as_bytes()),
                });
            }
        }
    }
    Ok(digests)
}

fn input_digests(exec: &Execution) -> Result<Vec<FileDigest>> {
    exec.inputs
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: file_digest(p)?,
            })
        })
        .collect()
}

fn rerun(
    args: &RerunArgs,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest_path)?;
    let argv = std::iter::once("infsample".to_string()).chain(manifest.argv.iter().cloned());
    let mut cli =
        Cli::try_parse_from(argv).map_err(|e| Error::config("argv", first_line(&e.to_string())))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::config("argv", "a manifest cannot describe a rerun"));
    }
    cli.manifest = None;
    for input in &manifest.inputs {
        let now = file_digest(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(Error::Integrity(format!(
                "input {} changed since the recorded run",
                input.path
            )));
        }
    }
    let exec = execute(&cli)?;
    let outputs = emit(&exec, stdout)?;
    if outputs != manifest.outputs {
        let differing: Vec<&str> = outputs
            .iter()
            .zip(&manifest.outputs)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.path.as_str())
            .collect();
        return Err(Error::Integrity(format!(
            "rerun differs from the manifest: {}",
            if differing.is_empty() {
                "output set".to_string()
            } else {
                differing.join(", ")
            }
        )));
    }
    for o in &outputs {
        let _ = writeln!(stderr, "reproduced {} sha256={}", o.path, o.sha256);
    }
    Ok(())
}

/// Collapses a multi-line message to one line, dropping any usage section.
fn first_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .trim_start_matches("error: ")
        .to_string()
}

/// Runs one parsed invocation. `argv` excludes the program name and is
/// recorded verbatim in the manifest.
pub fn run_cli(
    cli: &Cli,
    argv: &[String],
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> Result<()> {
    if let Command::Rerun(args) = &cli.command {
        return rerun(args, stdout, stderr);
    }
    let exec = execute(cli)?;
    let outputs = emit(&exec, stdout)?;
    if let Some(summary) = &exec.summary {
        let _ = writeln!(stderr, "{summary}");
    }
    if let Some(path) = &cli.manifest {
        let manifest = RunManifest {
            tool: "infsample".into(),
            version: TOOL_VERSION.into(),
            command: cli.command.name().into(),
            argv: argv.to_vec(),
            config: exec.config.clone(),
            seeds: exec.seeds.clone(),
            inputs: input_digests(&exec)?,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Process entry point: parses `args` (program name first) and returns the
/// exit code. Failures print one `error[kind]: message` line.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = writeln!(
                stderr.lock(),
                "error[usage]: {}",
                first_line(&e.to_string())
            );
            return 2;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).cloned().collect();
    match run_cli(&cli, &argv, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr.lock(), "error[{}]: {message}", e.kind());
            1
        }
    }
}
