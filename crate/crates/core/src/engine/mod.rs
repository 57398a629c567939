//! Discrete-step decoding simulator.
//!
//! Time advances in running steps: one token round in which every occupied
//! slot emits one token. A sample of length `L` placed on a slot at step `s`
//! finishes at step `s + L - 1`; its slot is refilled immediately and the
//! new sample emits its first token at the next step. Slots released in the
//! same step are refilled in ascending slot order.

mod replay;
mod runner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{
    fptas_plan, lpt_plan, makespan_lower_bound, optimal_schedule, DEFAULT_EXACT_MAX_JOBS,
};
use crate::trace::{predict_lengths, PredictorConfig, ResampleStream, Trace};

pub use replay::{replay_schedule, Occupancy};
use runner::{
    CandidateSource, FifoRefill, NoRefill, Runner, SjfPolicy, StaticQueues, Status, StreamRefill,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// All `G` samples decode in parallel.
    Full,
    /// `N` barriered rounds of `g`.
    Naive,
    /// Continuous refill in trace order with a per-slot quota of `N`.
    Fixed,
    /// Unconstrained refill from a candidate stream; stops at `G` completions.
    Dynamic,
    /// Prefix prediction, FPTAS pre-planning and SJF refill.
    Infinite,
    /// Post-hoc schedule on true lengths.
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Full,
        Strategy::Naive,
        Strategy::Fixed,
        Strategy::Dynamic,
        Strategy::Infinite,
        Strategy::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Naive => "naive",
            Strategy::Fixed => "fixed",
            Strategy::Dynamic => "dynamic",
            Strategy::Infinite => "infinite",
            Strategy::Oracle => "oracle",
        }
    }

    /// Strategies whose step count is split by `N = G / g` rounds.
    fn needs_even_split(self) -> bool {
        matches!(self, Strategy::Naive | Strategy::Fixed | Strategy::Infinite)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Fixed-slot scheduler variants, from no scheduling to the full two-stage one.
///
/// * `fifo`: trace-order start, trace-order refill, per-slot quota (same as [`Strategy::Fixed`]).
/// * `fptas-only`: start and refill in FPTAS plan order, per-slot quota.
/// * `sjf-only`: trace-order start, shortest-predicted refill.
/// * `infinite`: plan-order start, shortest-predicted refill (same as [`Strategy::Infinite`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduler {
    Fifo,
    FptasOnly,
    SjfOnly,
    Infinite,
}

impl Scheduler {
    pub const ALL: [Scheduler; 4] = [
        Scheduler::Fifo,
        Scheduler::FptasOnly,
        Scheduler::SjfOnly,
        Scheduler::Infinite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheduler::Fifo => "fifo",
            Scheduler::FptasOnly => "fptas-only",
            Scheduler::SjfOnly => "sjf-only",
            Scheduler::Infinite => "infinite",
        }
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheduler::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config("scheduler", format!("unknown scheduler `{s}`")))
    }
}

/// What FPTAS partitions the samples into.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// `N = G / g` micro groups.
    #[default]
    Groups,
    /// `g` slot queues.
    Slots,
}

impl FromStr for BinMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groups" => Ok(BinMode::Groups),
            "slots" => Ok(BinMode::Slots),
            _ => Err(Error::config(
                "bin_mode",
                format!("expected groups|slots, got `{s}`"),
            )),
        }
    }
}

/// Where dynamic-slot candidates come from once the trace is used up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicStream {
    /// Uniform resampling of the trace lengths, seeded by `dynamic_stream_seed`.
    #[default]
    Resample,
    /// The trace repeated in order.
    Cycle,
}

impl FromStr for DynamicStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resample" => Ok(DynamicStream::Resample),
            "cycle" => Ok(DynamicStream::Cycle),
            _ => Err(Error::config(
                "dynamic_stream",
                format!("expected resample|cycle, got `{s}`"),
            )),
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub strategy: Strategy,
    /// `G`; must match the trace.
    pub group_size: usize,
    /// `g`, the number of concurrent slots.
    pub micro_size: usize,
    pub epsilon: f64,
    pub predictor: PredictorConfig,
    pub count_prefix_steps: bool,
    pub retain_prefix_kv: bool,
    pub bin_mode: BinMode,
    pub dynamic_stream: DynamicStream,
    pub dynamic_stream_seed: u64,
    /// Largest instance the oracle solves exactly before falling back to LPT.
    pub exact_oracle_max_jobs: usize,
}

impl SimConfig {
    pub fn new(strategy: Strategy, group_size: usize, micro_size: usize) -> Self {
        SimConfig {
            strategy,
            group_size,
            micro_size,
            epsilon: DEFAULT_EPSILON,
            predictor: PredictorConfig::default(),
            count_prefix_steps: true,
            retain_prefix_kv: true,
            bin_mode: BinMode::Groups,
            dynamic_stream: DynamicStream::Resample,
            dynamic_stream_seed: 0,
            exact_oracle_max_jobs: DEFAULT_EXACT_MAX_JOBS,
        }
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        SimConfig {
            strategy,
            ..self.clone()
        }
    }

    /// Number of micro groups, `N = G / g`.
    pub fn n_groups(&self) -> usize {
        self.group_size / self.micro_size.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::config("group_size", "must be >= 1"));
        }
        if self.micro_size == 0 {
            return Err(Error::config("micro_size", "must be >= 1"));
        }
        if self.strategy.needs_even_split() && !self.group_size.is_multiple_of(self.micro_size) {
            return Err(Error::config(
                "micro_size",
                format!(
                    "group size {} is not divisible by micro size {} (required by `{}`)",
                    self.group_size, self.micro_size, self.strategy
                ),
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be a positive finite number"));
        }
        self.predictor.validate()
    }

    fn validate_for(&self, trace: &Trace) -> Result<()> {
        self.validate()?;
        trace.validate()?;
        if trace.len() != self.group_size {
            return Err(Error::config(
                "group_size",
                format!(
                    "config says {} but the trace has {} samples",
                    self.group_size,
                    trace.len()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotEvent {
    /// First token of a sample.
    Start,
    Token,
    /// Last token of a sample; its KV is released after this step.
    Finish,
    /// Slot handed a new sample; it decodes from the next step on.
    Refill,
    /// No sample on this slot during a step in which another slot decoded.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub slot: usize,
    pub event: SlotEvent,
    pub sample: Option<usize>,
}

impl LogEntry {
    pub(crate) fn new(step: u64, slot: usize, event: SlotEvent, sample: Option<usize>) -> Self {
        LogEntry {
            step,
            slot,
            event,
            sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: usize,
    pub start_step: u64,
    pub finish_step: u64,
    pub emitted_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub strategy: String,
    pub total_steps: u64,
    /// Completed samples, ordered by id.
    pub per_sample: Vec<SampleOutcome>,
    pub avg_emitted_len: f64,
    /// Prompt tokens plus the peak of concurrently held response tokens.
    pub peak_kv_tokens: u64,
    pub schedule_log: Vec<LogEntry>,
    pub discarded_ids: Vec<usize>,
    pub prompt_len: u64,
    pub n_slots: usize,
    /// Length of the prefix phase in log steps, counted or not.
    pub prefix_steps: u64,
    pub retain_prefix_kv: bool,
}

impl SimResult {
    /// JSON export; the schedule log is included only on request.
    pub fn to_json(&self, include_log: bool) -> String {
        let mut value = serde_json::to_value(self).expect("SimResult is serializable");
        if !include_log {
            if let Some(map) = value.as_object_mut() {
                map.remove("schedule_log");
            }
        }
        serde_json::to_string_pretty(&value).expect("value is serializable")
    }

    /// Response tokens still held at the peak step.
    pub fn peak_response_tokens(&self) -> u64 {
        self.peak_kv_tokens - self.prompt_len
    }

    /// Steps recorded in the log, including an uncounted prefix phase.
    pub fn log_steps(&self) -> u64 {
        self.schedule_log.last().map_or(0, |e| e.step)
    }
}

/// Runs `trace` under `cfg.strategy`.
pub fn simulate(trace: &Trace, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate_for(trace)?;
    match cfg.strategy {
        Strategy::Full => Ok(simulate_full(trace, cfg)),
        Strategy::Naive => Ok(simulate_naive(trace, cfg)),
        Strategy::Fixed => Ok(simulate_fifo(trace, cfg, Strategy::Fixed.name())),
        Strategy::Dynamic => Ok(simulate_dynamic(trace, cfg)),
        Strategy::Infinite => simulate_planned(trace, cfg, Scheduler::Infinite),
        Strategy::Oracle => simulate_oracle(trace, cfg),
    }
}

/// Runs `trace` under one of the fixed-slot scheduler variants.
pub fn simulate_scheduler(
    trace: &Trace,
    cfg: &SimConfig,
    scheduler: Scheduler,
) -> Result<SimResult> {
    let cfg = cfg.with_strategy(match scheduler {
        Scheduler::Fifo => Strategy::Fixed,
        _ => Strategy::Infinite,
    });
    cfg.validate_for(trace)?;
    match scheduler {
        Scheduler::Fifo => Ok(simulate_fifo(trace, &cfg, scheduler.name())),
        _ => simulate_planned(trace, &cfg, scheduler),
    }
}

fn finish(
    runner: Runner,
    trace: &Trace,
    label: &str,
    n_slots: usize,
    prefix_steps: u64,
    cfg: &SimConfig,
) -> SimResult {
    let mut per_sample = Vec::new();
    let mut discarded_ids = Vec::new();
    for id in 0..runner.status.len() {
        match runner.status[id] {
            Status::Finished => per_sample.push(SampleOutcome {
                id,
                start_step: runner.start_step[id],
                finish_step: runner.finish_step[id],
                emitted_len: runner.true_len[id],
            }),
            Status::Discarded => discarded_ids.push(id),
            _ => {}
        }
    }
    let emitted: u64 = per_sample.iter().map(|s| s.emitted_len).sum();
    let avg_emitted_len = if per_sample.is_empty() {
        0.0
    } else {
        emitted as f64 / per_sample.len() as f64
    };
    let uncounted = if cfg.count_prefix_steps {
        0
    } else {
        prefix_steps
    };
    SimResult {
        strategy: label.to_string(),
        total_steps: runner.step - uncounted,
        per_sample,
        avg_emitted_len,
        peak_kv_tokens: trace.prompt_len + runner.peak_tokens,
        schedule_log: runner.log,
        discarded_ids,
        prompt_len: trace.prompt_len,
        n_slots,
        prefix_steps,
        retain_prefix_kv: cfg.retain_prefix_kv,
    }
}

fn simulate_full(trace: &Trace, cfg: &SimConfig) -> SimResult {
    let g = trace.len();
    let mut runner = Runner::new(g, trace.true_lengths(), cfg.retain_prefix_kv);
    for id in 0..g {
        runner.place_to_end(id, id, false);
    }
    runner.run(&mut NoRefill);
    finish(runner, trace, Strategy::Full.name(), g, 0, cfg)
}

fn simulate_naive(trace: &Trace, cfg: &SimConfig) -> SimResult {
    let g = cfg.micro_size;
    let mut runner = Runner::new(g, trace.true_lengths(), cfg.retain_prefix_kv);
    for (round, chunk) in (0..trace.len()).collect::<Vec<_>>().chunks(g).enumerate() {
        for (slot, &id) in chunk.iter().enumerate() {
            runner.place_to_end(slot, id, round > 0);
        }
        runner.run(&mut NoRefill);
    }
    finish(runner, trace, Strategy::Naive.name(), g, 0, cfg)
}

fn simulate_fifo(trace: &Trace, cfg: &SimConfig, label: &str) -> SimResult {
    let g = cfg.micro_size;
    let mut runner = Runner::new(g, trace.true_lengths(), cfg.retain_prefix_kv);
    let mut policy = FifoRefill::new((0..trace.len()).collect(), g, Some(cfg.n_groups()));
    runner.fill_free_slots(&mut policy);
    runner.run(&mut policy);
    finish(runner, trace, label, g, 0, cfg)
}

fn simulate_dynamic(trace: &Trace, cfg: &SimConfig) -> SimResult {
    let g = cfg.micro_size;
    let lengths = trace.true_lengths();
    let source = match cfg.dynamic_stream {
        DynamicStream::Resample => CandidateSource::Resample(Box::new(ResampleStream::new(
            lengths.clone(),
            cfg.dynamic_stream_seed,
        ))),
        DynamicStream::Cycle => CandidateSource::Cycle(lengths.clone()),
    };
    let mut runner = Runner::new(g, lengths, cfg.retain_prefix_kv);
    runner.limit_completions(trace.len());
    let mut policy = StreamRefill::new(trace.len(), source);
    runner.fill_free_slots(&mut policy);
    runner.run(&mut policy);
    finish(runner, trace, Strategy::Dynamic.name(), g, 0, cfg)
}

fn simulate_oracle(trace: &Trace, cfg: &SimConfig) -> Result<SimResult> {
    let g = cfg.micro_size;
    let lengths = trace.true_lengths();
    let schedule = if lengths.len() <= cfg.exact_oracle_max_jobs {
        optimal_schedule(&lengths, g, cfg.exact_oracle_max_jobs)?
    } else {
        lpt_plan(&lengths, g)?
    };
    let mut runner = Runner::new(g, lengths, cfg.retain_prefix_kv);
    let mut policy = StaticQueues::new(schedule.queues);
    runner.fill_free_slots(&mut policy);
    runner.run(&mut policy);
    Ok(finish(runner, trace, Strategy::Oracle.name(), g, 0, cfg))
}

/// Decodes the first `prefix_k` tokens of every sample in barriered rounds of
/// `g` in trace order. Returns the number of steps it took.
fn run_prefix_phase(runner: &mut Runner, g: usize, prefix_k: u64) -> u64 {
    if prefix_k == 0 {
        return 0;
    }
    let n = runner.true_len.len();
    for (round, chunk) in (0..n).collect::<Vec<_>>().chunks(g).enumerate() {
        for (slot, &id) in chunk.iter().enumerate() {
            let stop = prefix_k.min(runner.true_len[id]);
            runner.place(slot, id, stop, round > 0);
        }
        runner.run(&mut NoRefill);
    }
    runner.step
}

/// Steps taken by the barriered prefix phase: per round, `min(k, longest)`.
pub fn prefix_phase_steps(lengths: &[u64], g: usize, prefix_k: u64) -> u64 {
    if prefix_k == 0 || g == 0 {
        return 0;
    }
    lengths
        .chunks(g)
        .map(|round| prefix_k.min(round.iter().copied().max().unwrap_or(0)))
        .sum()
}

fn simulate_planned(trace: &Trace, cfg: &SimConfig, scheduler: Scheduler) -> Result<SimResult> {
    let g = cfg.micro_size;
    let prefix_k = cfg.predictor.prefix_k;
    let mut runner = Runner::new(g, trace.true_lengths(), cfg.retain_prefix_kv);
    let prefix_steps = run_prefix_phase(&mut runner, g, prefix_k);

    let predicted = predict_lengths(trace, &cfg.predictor)?;
    let preds: Vec<u64> = predicted
        .samples
        .iter()
        .map(|s| s.pred_len.expect("predictor fills every sample"))
        .collect();
    let done: Vec<usize> = (0..trace.len())
        .filter(|&i| runner.status[i] == Status::Finished)
        .collect();
    let remaining: Vec<usize> = (0..trace.len())
        .filter(|&i| runner.status[i] != Status::Finished)
        .collect();

    if !remaining.is_empty() {
        let bins = match cfg.bin_mode {
            BinMode::Groups => cfg.n_groups(),
            BinMode::Slots => g,
        };
        let local_preds: Vec<u64> = remaining.iter().map(|&i| preds[i]).collect();
        let plan = fptas_plan(&local_preds, bins, cfg.epsilon)?;
        let to_global = |groups: &[Vec<usize>]| -> Vec<Vec<usize>> {
            groups
                .iter()
                .map(|grp| grp.iter().map(|&j| remaining[j]).collect())
                .collect()
        };
        let groups = to_global(&plan.groups);
        let plan_order: Vec<usize> = groups.iter().flatten().copied().collect();

        let initial: Vec<Option<usize>> = match (scheduler, cfg.bin_mode) {
            (Scheduler::SjfOnly, _) => (0..g).map(|s| remaining.get(s).copied()).collect(),
            (_, BinMode::Groups) => (0..g).map(|s| plan_order.get(s).copied()).collect(),
            (_, BinMode::Slots) => (0..g).map(|s| groups[s].first().copied()).collect(),
        };

        match scheduler {
            Scheduler::FptasOnly => {
                let mut policy = FifoRefill::new(plan_order, g, Some(cfg.n_groups()));
                runner.fill_free_slots(&mut policy);
                runner.run(&mut policy);
            }
            _ => {
                let placed: Vec<(usize, usize)> = initial
                    .iter()
                    .enumerate()
                    .filter_map(|(slot, id)| id.map(|id| (slot, id)))
                    .collect();
                for &(slot, id) in &placed {
                    runner.place_to_end(slot, id, prefix_steps > 0);
                }
                let mut policy = SjfPolicy::new(preds, g, &done, &placed);
                runner.fill_free_slots(&mut policy);
                runner.run(&mut policy);
            }
        }
    }
    let label = match scheduler {
        Scheduler::Infinite => Strategy::Infinite.name(),
        other => other.name(),
    };
    Ok(finish(runner, trace, label, g, prefix_steps, cfg))
}

/// Analytic lower bound on the running steps of a barrier-free schedule on
/// `g` slots. With a prefix phase, the bound covers the remaining work and
/// adds the prefix steps when they are counted.
pub fn step_lower_bound(trace: &Trace, g: usize, prefix_k: u64, count_prefix_steps: bool) -> u64 {
    let lengths = trace.true_lengths();
    let remaining: Vec<u64> = lengths
        .iter()
        .map(|&l| l.saturating_sub(prefix_k))
        .collect();
    let prefix = if count_prefix_steps {
        prefix_phase_steps(&lengths, g, prefix_k)
    } else {
        0
    };
    prefix + makespan_lower_bound(&remaining, g)
}

/// One strategy's result relative to the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub total_steps: u64,
    pub step_ratio: f64,
    pub avg_emitted_len: f64,
    pub len_ratio: f64,
    pub peak_kv_tokens: u64,
}

/// A row in a comparison: either a strategy or a fixed-slot scheduler variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Strategy(Strategy),
    Scheduler(Scheduler),
}

impl Variant {
    pub fn simulate(self, trace: &Trace, cfg: &SimConfig) -> Result<SimResult> {
        match self {
            Variant::Strategy(s) => simulate(trace, &cfg.with_strategy(s)),
            Variant::Scheduler(s) => simulate_scheduler(trace, cfg, s),
        }
    }
}

/// Simulates each strategy on the same trace. Ratios are taken against the
/// `naive` row when present, otherwise against the first row.
pub fn run_comparison(
    trace: &Trace,
    base: &SimConfig,
    strategies: &[Strategy],
) -> Result<Vec<ComparisonRow>> {
    let variants: Vec<Variant> = strategies.iter().map(|&s| Variant::Strategy(s)).collect();
    run_variants(trace, base, &variants)
}

pub fn run_variants(
    trace: &Trace,
    base: &SimConfig,
    variants: &[Variant],
) -> Result<Vec<ComparisonRow>> {
    if variants.is_empty() {
        return Err(Error::config(
            "strategies",
            "at least one strategy is required",
        ));
    }
    let results: Vec<SimResult> = variants
        .iter()
        .map(|v| v.simulate(trace, base))
        .collect::<Result<_>>()?;
    let baseline = variants
        .iter()
        .position(|&v| v == Variant::Strategy(Strategy::Naive))
        .unwrap_or(0);
    let (base_steps, base_len) = (
        results[baseline].total_steps as f64,
        results[baseline].avg_emitted_len,
    );
    Ok(results
        .into_iter()
        .map(|r| ComparisonRow {
            step_ratio: r.total_steps as f64 / base_steps,
            len_ratio: r.avg_emitted_len / base_len,
            strategy: r.strategy,
            total_steps: r.total_steps,
            avg_emitted_len: r.avg_emitted_len,
            peak_kv_tokens: r.peak_kv_tokens,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PredictorKind;

    fn worked() -> Trace {
        Trace::from_lengths(0, &[5, 3, 4, 2]).unwrap()
    }

    fn run(strategy: Strategy, g: usize) -> SimResult {
        let t = worked();
        simulate(&t, &SimConfig::new(strategy, t.len(), g)).unwrap()
    }

    fn outcome(r: &SimResult, id: usize) -> SampleOutcome {
        *r.per_sample.iter().find(|s| s.id == id).unwrap()
    }

    #[test]
    fn full_takes_the_longest() {
        assert_eq!(run(Strategy::Full, 2).total_steps, 5);
    }

    #[test]
    fn naive_pays_each_round_barrier() {
        let r = run(Strategy::Naive, 2);
        assert_eq!(r.total_steps, 9);
        assert_eq!(outcome(&r, 2).start_step, 6);
        assert_eq!(outcome(&r, 3).finish_step, 7);
    }

    #[test]
    fn fixed_refills_in_trace_order() {
        let r = run(Strategy::Fixed, 2);
        assert_eq!(r.total_steps, 7);
        // slot 1 frees at step 3 and takes sample 2; slot 0 frees at 5 and takes 3
        assert_eq!(
            (outcome(&r, 2).start_step, outcome(&r, 2).finish_step),
            (4, 7)
        );
        assert_eq!(
            (outcome(&r, 3).start_step, outcome(&r, 3).finish_step),
            (6, 7)
        );
    }

    #[test]
    fn oracle_matches_optimum() {
        assert_eq!(run(Strategy::Oracle, 2).total_steps, 7);
    }

    #[test]
    fn infinite_hand_trace() {
        let r = run(Strategy::Infinite, 2);
        assert_eq!(r.total_steps, 9);
        assert_eq!(
            (outcome(&r, 3).start_step, outcome(&r, 3).finish_step),
            (4, 5)
        );
        assert_eq!(
            (outcome(&r, 2).start_step, outcome(&r, 2).finish_step),
            (6, 9)
        );
    }

    #[test]
    fn scheduler_variants_on_worked_example() {
        let t = worked();
        let cfg = SimConfig::new(Strategy::Infinite, 4, 2);
        let steps = |s| simulate_scheduler(&t, &cfg, s).unwrap().total_steps;
        assert_eq!(steps(Scheduler::Fifo), 7);
        assert_eq!(steps(Scheduler::Infinite), 9);
        // trace-order start (0, 1); slot 1 frees at 3 and takes 3 (pred 2), then 2
        assert_eq!(steps(Scheduler::SjfOnly), 9);
        // plan order 0,1,2,3 with FIFO refill behaves like fixed here
        assert_eq!(steps(Scheduler::FptasOnly), 7);
    }

    #[test]
    fn dynamic_stops_at_group_size() {
        let t = Trace::from_lengths(0, &[10, 1, 1, 1]).unwrap();
        let mut cfg = SimConfig::new(Strategy::Dynamic, 4, 2);
        cfg.dynamic_stream = DynamicStream::Cycle;
        let r = simulate(&t, &cfg).unwrap();
        // slot 1 completes three singles, then the cycled 10 is cut off
        assert_eq!(r.per_sample.len(), 4);
        assert_eq!(r.total_steps, 10);
        assert_eq!(r.discarded_ids, vec![4]);
    }

    #[test]
    fn dynamic_discards_in_flight_long_sample() {
        // step 1 finishes 0 and 1; step 2 finishes 2; step 3 finishes the
        // cycled copy of sample 0 and the 50 is dropped
        let t = Trace::from_lengths(0, &[1, 1, 1, 50]).unwrap();
        let mut cfg = SimConfig::new(Strategy::Dynamic, 4, 2);
        cfg.dynamic_stream = DynamicStream::Cycle;
        let r = simulate(&t, &cfg).unwrap();
        assert_eq!(r.discarded_ids, vec![3]);
        assert_eq!(
            r.per_sample.iter().map(|s| s.id).collect::<Vec<_>>(),
            vec![0, 1, 2, 4]
        );
        assert_eq!(r.total_steps, 3);
        assert_eq!(r.avg_emitted_len, 1.0);
    }

    #[test]
    fn divisibility_enforced_where_needed() {
        let t = Trace::from_lengths(0, &[1, 2, 3]).unwrap();
        for s in [Strategy::Naive, Strategy::Fixed, Strategy::Infinite] {
            assert!(matches!(
                simulate(&t, &SimConfig::new(s, 3, 2)),
                Err(Error::Config { .. })
            ));
        }
        for s in [Strategy::Full, Strategy::Dynamic, Strategy::Oracle] {
            assert!(simulate(&t, &SimConfig::new(s, 3, 2)).is_ok());
        }
        assert!(simulate(&t, &SimConfig::new(Strategy::Full, 4, 2)).is_err());
        assert!(simulate(&t, &SimConfig::new(Strategy::Full, 3, 0)).is_err());
    }

    #[test]
    fn infinite_requires_file_predictions() {
        let t = worked();
        let mut cfg = SimConfig::new(Strategy::Infinite, 4, 2);
        cfg.predictor.kind = PredictorKind::File;
        assert!(matches!(simulate(&t, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn prefix_phase_accounting() {
        let t = worked();
        let mut cfg = SimConfig::new(Strategy::Infinite, 4, 2);
        cfg.predictor.prefix_k = 2;
        let counted = simulate(&t, &cfg).unwrap();
        assert_eq!(counted.prefix_steps, 4);
        cfg.count_prefix_steps = false;
        let uncounted = simulate(&t, &cfg).unwrap();
        assert_eq!(counted.total_steps, uncounted.total_steps + 4);
        assert_eq!(counted.log_steps(), uncounted.log_steps());
        // sample 3 (len 2) finished inside the prefix phase
        assert_eq!(outcome(&counted, 3).finish_step, 4);
        assert!(counted.total_steps >= step_lower_bound(&t, 2, 2, true));
        assert!(uncounted.total_steps >= step_lower_bound(&t, 2, 2, false));
    }

    #[test]
    fn prefix_longer_than_everything() {
        let t = worked();
        let mut cfg = SimConfig::new(Strategy::Infinite, 4, 2);
        cfg.predictor.prefix_k = 10;
        let r = simulate(&t, &cfg).unwrap();
        assert_eq!(r.prefix_steps, 9);
        assert_eq!(r.total_steps, 9);
        assert_eq!(r.per_sample.len(), 4);
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(step_lower_bound(&worked(), 2, 0, true), 7);
        assert_eq!(
            step_lower_bound(&Trace::from_lengths(0, &[9, 1]).unwrap(), 2, 0, true),
            9
        );
        assert_eq!(step_lower_bound(&worked(), 1, 0, true), 14);
    }

    #[test]
    fn comparison_ratios() {
        let t = worked();
        let base = SimConfig::new(Strategy::Naive, 4, 2);
        let rows = run_comparison(
            &t,
            &base,
            &[Strategy::Naive, Strategy::Fixed, Strategy::Oracle],
        )
        .unwrap();
        assert_eq!(rows[0].total_steps, 9);
        assert_eq!(rows[0].step_ratio, 1.0);
        assert!((rows[1].step_ratio - 7.0 / 9.0).abs() < 1e-12);
        assert!((rows[2].step_ratio - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(rows[1].len_ratio, 1.0);

        let rows = run_comparison(&t, &base, &[Strategy::Oracle]).unwrap();
        assert_eq!(rows[0].step_ratio, 1.0);
        assert!(run_comparison(&t, &base, &[]).is_err());
    }

    #[test]
    fn bin_mode_slots_runs() {
        let t = Trace::from_lengths(0, &[1, 1, 1, 1, 1, 1]).unwrap();
        let mut cfg = SimConfig::new(Strategy::Infinite, 6, 3);
        cfg.bin_mode = BinMode::Slots;
        let r = simulate(&t, &cfg).unwrap();
        assert_eq!(r.total_steps, 2);
    }

    #[test]
    fn parse_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        for s in Scheduler::ALL {
            assert_eq!(s.name().parse::<Scheduler>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}

#[cfg(test)]
mod props {
    use super::{
        replay_schedule, simulate, simulate_scheduler, step_lower_bound, Scheduler, SimConfig,
        SlotEvent, Strategy as Mode,
    };
    use crate::planner::optimal_makespan;
    use crate::trace::{PredictorConfig, Trace};
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (Vec<u64>, usize)> {
        (1usize..4, 1usize..5)
            .prop_flat_map(|(g, n)| (prop::collection::vec(1u64..25, g * n), Just(g)))
    }

    const COMPLETE: [Mode; 5] = [
        Mode::Full,
        Mode::Naive,
        Mode::Fixed,
        Mode::Infinite,
        Mode::Oracle,
    ];

    proptest! {
        #[test]
        fn steps_respect_bounds((lengths, g) in instance(), prefix_k in 0u64..6, counted in any::<bool>()) {
            let t = Trace::from_lengths(0, &lengths).unwrap();
            let mut cfg = SimConfig::new(Mode::Naive, lengths.len(), g);
            cfg.predictor.prefix_k = prefix_k;
            cfg.count_prefix_steps = counted;
            let opt = optimal_makespan(&lengths, g).unwrap();
            for s in COMPLETE {
                let r = simulate(&t, &cfg.with_strategy(s)).unwrap();
                let slots = if s == Mode::Full { lengths.len() } else { g };
                let (k, c) = if s == Mode::Infinite { (prefix_k, counted) } else { (0, true) };
                prop_assert!(r.total_steps >= step_lower_bound(&t, slots, k, c), "{s}");
                if s != Mode::Full && (s != Mode::Infinite || prefix_k == 0) {
                    prop_assert!(r.total_steps >= opt, "{s}");
                }
                prop_assert_eq!(r.per_sample.len(), lengths.len());
                prop_assert!((r.avg_emitted_len - t.mean_len()).abs() <= 1e-12 * t.mean_len());
            }
            for sc in [Scheduler::FptasOnly, Scheduler::SjfOnly] {
                let r = simulate_scheduler(&t, &cfg, sc).unwrap();
                prop_assert!(r.total_steps >= step_lower_bound(&t, g, prefix_k, counted));
                prop_assert_eq!(r.per_sample.len(), lengths.len());
            }
        }

        #[test]
        fn replay_agrees_and_tokens_are_conserved(
            (lengths, g) in instance(),
            prefix_k in 0u64..6,
            retain in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let t = Trace::from_lengths(3, &lengths).unwrap();
            let mut cfg = SimConfig::new(Mode::Naive, lengths.len(), g);
            cfg.predictor = PredictorConfig::noisy(0.3, seed);
            cfg.predictor.prefix_k = prefix_k;
            cfg.retain_prefix_kv = retain;
            cfg.dynamic_stream_seed = seed;
            for s in Mode::ALL {
                let r = simulate(&t, &cfg.with_strategy(s)).unwrap();
                let occ = replay_schedule(&r).unwrap();
                let decoded: usize = occ.active_slots.iter().sum();
                let tokens = r.schedule_log.iter().filter(|e| e.event == SlotEvent::Token).count();
                let discarded: usize = r
                    .schedule_log
                    .iter()
                    .filter(|e| e.event == SlotEvent::Token && r.discarded_ids.contains(&e.sample.unwrap()))
                    .count();
                let emitted: u64 = r.per_sample.iter().map(|p| p.emitted_len).sum();
                prop_assert_eq!(decoded, tokens);
                prop_assert_eq!(decoded as u64, emitted + discarded as u64);
                if s != Mode::Infinite || prefix_k == 0 {
                    for p in &r.per_sample {
                        prop_assert_eq!(p.finish_step - p.start_step + 1, p.emitted_len);
                    }
                }
                if s == Mode::Dynamic {
                    prop_assert_eq!(r.per_sample.len(), lengths.len());
                }
            }
        }

        #[test]
        fn fixed_quota_per_slot((lengths, g) in instance()) {
            let t = Trace::from_lengths(0, &lengths).unwrap();
            let cfg = SimConfig::new(Mode::Fixed, lengths.len(), g);
            let r = simulate(&t, &cfg).unwrap();
            let mut per_slot = vec![0usize; g];
            for e in r.schedule_log.iter().filter(|e| e.event == SlotEvent::Finish) {
                per_slot[e.slot] += 1;
            }
            prop_assert!(per_slot.iter().all(|&c| c <= cfg.n_groups()));
            prop_assert_eq!(per_slot.iter().sum::<usize>(), lengths.len());
        }

        #[test]
        fn naive_holds_less_than_full((lengths, g) in instance()) {
            let t = Trace::from_lengths(0, &lengths).unwrap();
            let cfg = SimConfig::new(Mode::Naive, lengths.len(), g);
            let naive = simulate(&t, &cfg).unwrap();
            let full = simulate(&t, &cfg.with_strategy(Mode::Full)).unwrap();
            prop_assert!(naive.peak_kv_tokens <= full.peak_kv_tokens);
            prop_assert!(naive.peak_response_tokens() <= g as u64 * t.max_len());
        }

        #[test]
        fn simulation_is_deterministic((lengths, g) in instance(), seed in any::<u64>()) {
            let t = Trace::from_lengths(0, &lengths).unwrap();
            let mut cfg = SimConfig::new(Mode::Dynamic, lengths.len(), g);
            cfg.predictor = PredictorConfig::noisy(0.2, seed);
            cfg.dynamic_stream_seed = seed;
            for s in Mode::ALL {
                let c = cfg.with_strategy(s);
                prop_assert_eq!(simulate(&t, &c).unwrap(), simulate(&t, &c).unwrap());
            }
        }
    }
}
