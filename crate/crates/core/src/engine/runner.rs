//! Token-round slot machinery shared by every strategy.

use std::collections::VecDeque;

use crate::planner::{sjf_refill, SlotQueueState};
use crate::trace::ResampleStream;

use super::{LogEntry, SlotEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Waiting,
    Running,
    /// Prefix decoded, parked until the scheduler resumes it.
    Paused,
    Finished,
    Discarded,
}

#[derive(Debug, Clone, Copy)]
struct Stint {
    id: usize,
    /// Decoded-token count at which this stint hands the slot back.
    stop_at: u64,
}

pub(crate) struct Runner {
    pub step: u64,
    slots: Vec<Option<Stint>>,
    pub true_len: Vec<u64>,
    pub decoded: Vec<u64>,
    pub status: Vec<Status>,
    pub start_step: Vec<u64>,
    pub finish_step: Vec<u64>,
    pub log: Vec<LogEntry>,
    pub peak_tokens: u64,
    paused_tokens: u64,
    retain_paused: bool,
    pub completed: usize,
    completion_limit: Option<usize>,
}

impl Runner {
    pub fn new(n_slots: usize, true_len: Vec<u64>, retain_paused: bool) -> Self {
        let n = true_len.len();
        Runner {
            step: 0,
            slots: vec![None; n_slots],
            true_len,
            decoded: vec![0; n],
            status: vec![Status::Waiting; n],
            start_step: vec![0; n],
            finish_step: vec![0; n],
            log: Vec::new(),
            peak_tokens: 0,
            paused_tokens: 0,
            retain_paused,
            completed: 0,
            completion_limit: None,
        }
    }

    /// Stop at this many completions; anything still in flight is discarded.
    pub fn limit_completions(&mut self, limit: usize) {
        self.completion_limit = Some(limit);
    }

    pub fn add_sample(&mut self, true_len: u64) -> usize {
        self.true_len.push(true_len);
        self.decoded.push(0);
        self.status.push(Status::Waiting);
        self.start_step.push(0);
        self.finish_step.push(0);
        self.true_len.len() - 1
    }

    pub fn is_busy(&self) -> bool {
        self.slots.iter().any(Option::is_some)
    }

    /// Puts `id` on `slot` until it has decoded `stop_at` tokens in total.
    pub fn place(&mut self, slot: usize, id: usize, stop_at: u64, log_refill: bool) {
        debug_assert!(self.slots[slot].is_none(), "slot {slot} is occupied");
        debug_assert!(stop_at > self.decoded[id] && stop_at <= self.true_len[id]);
        if self.status[id] == Status::Paused {
            self.paused_tokens -= self.decoded[id];
        }
        self.status[id] = Status::Running;
        self.slots[slot] = Some(Stint { id, stop_at });
        if log_refill {
            self.log
                .push(LogEntry::new(self.step, slot, SlotEvent::Refill, Some(id)));
        }
    }

    /// Runs the sample to completion from wherever it stopped.
    pub fn place_to_end(&mut self, slot: usize, id: usize, log_refill: bool) {
        let end = self.true_len[id];
        self.place(slot, id, end, log_refill);
    }

    /// One token round. Returns the slots released by this round, ascending.
    fn step_once(&mut self) -> Vec<usize> {
        debug_assert!(self.is_busy());
        self.step += 1;
        let step = self.step;
        let mut held = 0;
        for (slot, stint) in self.slots.iter().enumerate() {
            match stint {
                Some(st) => {
                    let id = st.id;
                    self.decoded[id] += 1;
                    if self.decoded[id] == 1 {
                        self.start_step[id] = step;
                        self.log
                            .push(LogEntry::new(step, slot, SlotEvent::Start, Some(id)));
                    }
                    self.log
                        .push(LogEntry::new(step, slot, SlotEvent::Token, Some(id)));
                    held += self.decoded[id];
                }
                None => self
                    .log
                    .push(LogEntry::new(step, slot, SlotEvent::Idle, None)),
            }
        }
        if self.retain_paused {
            held += self.paused_tokens;
        }
        self.peak_tokens = self.peak_tokens.max(held);

        let mut released = Vec::new();
        for slot in 0..self.slots.len() {
            let Some(st) = self.slots[slot] else { continue };
            if self.decoded[st.id] < st.stop_at {
                continue;
            }
            self.slots[slot] = None;
            released.push(slot);
            if self.decoded[st.id] < self.true_len[st.id] {
                self.status[st.id] = Status::Paused;
                self.paused_tokens += self.decoded[st.id];
            } else if self
                .completion_limit
                .is_some_and(|limit| self.completed >= limit)
            {
                self.status[st.id] = Status::Discarded;
            } else {
                self.status[st.id] = Status::Finished;
                self.finish_step[st.id] = step;
                self.completed += 1;
                self.log
                    .push(LogEntry::new(step, slot, SlotEvent::Finish, Some(st.id)));
            }
        }
        released
    }

    fn limit_reached(&self) -> bool {
        self.completion_limit
            .is_some_and(|limit| self.completed >= limit)
    }

    /// Fills every free slot from the policy before decoding starts.
    pub fn fill_free_slots(&mut self, policy: &mut dyn RefillPolicy) {
        for slot in 0..self.slots.len() {
            if self.slots[slot].is_none() {
                if let Some(id) = policy.refill(slot, self) {
                    self.place_to_end(slot, id, false);
                }
            }
        }
    }

    /// Decodes until every slot drains, refilling released slots from `policy`.
    pub fn run(&mut self, policy: &mut dyn RefillPolicy) {
        while self.is_busy() {
            let released = self.step_once();
            if self.limit_reached() {
                for slot in 0..self.slots.len() {
                    if let Some(st) = self.slots[slot].take() {
                        self.status[st.id] = Status::Discarded;
                    }
                }
                break;
            }
            for slot in released {
                if let Some(id) = policy.refill(slot, self) {
                    self.place_to_end(slot, id, true);
                }
            }
        }
    }
}

pub(crate) trait RefillPolicy {
    /// Next sample for a freed slot, or `None` to leave it idle.
    fn refill(&mut self, slot: usize, runner: &mut Runner) -> Option<usize>;
}

pub(crate) struct NoRefill;

impl RefillPolicy for NoRefill {
    fn refill(&mut self, _slot: usize, _runner: &mut Runner) -> Option<usize> {
        None
    }
}

/// Next unstarted sample in a fixed order, with an optional per-slot quota.
pub(crate) struct FifoRefill {
    order: VecDeque<usize>,
    quota: Option<usize>,
    assigned: Vec<usize>,
}

impl FifoRefill {
    pub fn new(order: Vec<usize>, n_slots: usize, quota: Option<usize>) -> Self {
        FifoRefill {
            order: order.into(),
            quota,
            assigned: vec![0; n_slots],
        }
    }
}

impl RefillPolicy for FifoRefill {
    fn refill(&mut self, slot: usize, runner: &mut Runner) -> Option<usize> {
        if self.quota.is_some_and(|q| self.assigned[slot] >= q) {
            return None;
        }
        while let Some(id) = self.order.pop_front() {
            if matches!(runner.status[id], Status::Waiting | Status::Paused) {
                self.assigned[slot] += 1;
                return Some(id);
            }
        }
        None
    }
}

/// Shortest predicted pending sample.
pub(crate) struct SjfPolicy {
    pub state: SlotQueueState,
    preds: Vec<u64>,
}

impl SjfPolicy {
    /// `done` samples are never offered; `initial` are already on slots.
    pub fn new(
        preds: Vec<u64>,
        n_slots: usize,
        done: &[usize],
        initial: &[(usize, usize)],
    ) -> Self {
        let mut state = SlotQueueState::new(preds.len(), n_slots);
        for &id in done {
            state.retire(id);
        }
        for &(slot, id) in initial {
            state.assign(id, slot);
        }
        SjfPolicy { state, preds }
    }
}

impl RefillPolicy for SjfPolicy {
    fn refill(&mut self, slot: usize, runner: &mut Runner) -> Option<usize> {
        for id in 0..runner.status.len() {
            if runner.status[id] == Status::Finished && !self.state.is_finished(id) {
                self.state.mark_finished(id);
            }
        }
        sjf_refill(&mut self.state, slot, &self.preds)
    }
}

/// Precomputed per-slot queues.
pub(crate) struct StaticQueues {
    queues: Vec<VecDeque<usize>>,
}

impl StaticQueues {
    pub fn new(queues: Vec<Vec<usize>>) -> Self {
        StaticQueues {
            queues: queues.into_iter().map(VecDeque::from).collect(),
        }
    }
}

impl RefillPolicy for StaticQueues {
    fn refill(&mut self, slot: usize, _runner: &mut Runner) -> Option<usize> {
        self.queues[slot].pop_front()
    }
}

pub(crate) enum CandidateSource {
    Resample(Box<ResampleStream>),
    Cycle(Vec<u64>),
}

/// Unbounded candidate stream: the trace first, then further draws.
pub(crate) struct StreamRefill {
    next_trace_id: usize,
    group_size: usize,
    drawn: usize,
    source: CandidateSource,
}

impl StreamRefill {
    pub fn new(group_size: usize, source: CandidateSource) -> Self {
        StreamRefill {
            next_trace_id: 0,
            group_size,
            drawn: 0,
            source,
        }
    }
}

impl RefillPolicy for StreamRefill {
    fn refill(&mut self, _slot: usize, runner: &mut Runner) -> Option<usize> {
        if self.next_trace_id < self.group_size {
            self.next_trace_id += 1;
            return Some(self.next_trace_id - 1);
        }
        let len = match &mut self.source {
            CandidateSource::Resample(stream) => stream.next_len(),
            CandidateSource::Cycle(lengths) => lengths[self.drawn % lengths.len()],
        };
        self.drawn += 1;
        Some(runner.add_sample(len))
    }
}
