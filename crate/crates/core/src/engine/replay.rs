//! Rebuilds per-step occupancy from a schedule log alone.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{SimResult, SlotEvent};

/// Per-step occupancy; index `i` is step `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    pub active_slots: Vec<usize>,
    /// Response tokens held at the end of each step, paused prefixes included
    /// when the result retains them.
    pub response_tokens: Vec<u64>,
}

impl Occupancy {
    pub fn peak_response_tokens(&self) -> u64 {
        self.response_tokens.iter().copied().max().unwrap_or(0)
    }
}

fn broken(message: impl Into<String>) -> Error {
    Error::Integrity(message.into())
}

/// Replays `result.schedule_log` and checks it against the reported totals.
pub fn replay_schedule(result: &SimResult) -> Result<Occupancy> {
    let log = &result.schedule_log;
    let n_slots = result.n_slots;
    let mut decoded: HashMap<usize, u64> = HashMap::new();
    let mut finished: HashMap<usize, u64> = HashMap::new();
    let mut active_slots = Vec::new();
    let mut response_tokens = Vec::new();

    let mut i = 0;
    let mut expected_step: u64 = 1;
    while i < log.len() {
        let step = log[i].step;
        if step < expected_step.saturating_sub(1) {
            return Err(broken(format!("log step {step} goes backwards")));
        }
        // Refills are logged at the step that freed the slot.
        if step + 1 == expected_step && log[i].event == SlotEvent::Refill {
            i += 1;
            continue;
        }
        if step != expected_step {
            return Err(broken(format!(
                "expected step {expected_step}, found {step}"
            )));
        }
        let mut slot_seen = vec![false; n_slots];
        let mut running = Vec::new();
        while i < log.len() && log[i].step == step {
            let e = log[i];
            i += 1;
            if e.slot >= n_slots {
                return Err(broken(format!("step {step}: slot {} out of range", e.slot)));
            }
            match e.event {
                SlotEvent::Token | SlotEvent::Idle => {
                    if slot_seen[e.slot] {
                        return Err(broken(format!(
                            "step {step}: slot {} decodes twice",
                            e.slot
                        )));
                    }
                    slot_seen[e.slot] = true;
                    if e.event == SlotEvent::Idle {
                        continue;
                    }
                    let id = e
                        .sample
                        .ok_or_else(|| broken(format!("step {step}: token without a sample")))?;
                    if finished.contains_key(&id) {
                        return Err(broken(format!(
                            "step {step}: sample {id} decodes after finishing"
                        )));
                    }
                    if running.contains(&id) {
                        return Err(broken(format!(
                            "step {step}: sample {id} decodes on two slots"
                        )));
                    }
                    *decoded.entry(id).or_insert(0) += 1;
                    running.push(id);
                }
                SlotEvent::Start => {
                    let id = e
                        .sample
                        .ok_or_else(|| broken(format!("step {step}: start without a sample")))?;
                    if decoded.get(&id).copied().unwrap_or(0) != 0 {
                        return Err(broken(format!("step {step}: sample {id} starts twice")));
                    }
                }
                SlotEvent::Finish => {
                    let id = e
                        .sample
                        .ok_or_else(|| broken(format!("step {step}: finish without a sample")))?;
                    if !running.contains(&id) {
                        return Err(broken(format!(
                            "step {step}: sample {id} finishes without decoding"
                        )));
                    }
                    finished.insert(id, step);
                }
                SlotEvent::Refill => {}
            }
        }
        if slot_seen.iter().any(|seen| !seen) {
            return Err(broken(format!("step {step}: some slot has no entry")));
        }
        let mut held: u64 = running.iter().map(|id| decoded[id]).sum();
        if result.retain_prefix_kv {
            held += decoded
                .iter()
                .filter(|(id, _)| !finished.contains_key(id) && !running.contains(id))
                .map(|(_, n)| n)
                .sum::<u64>();
        }
        active_slots.push(running.len());
        response_tokens.push(held);
        expected_step += 1;
    }

    let log_steps = active_slots.len() as u64;
    let counted = if result.total_steps == log_steps {
        true
    } else if result.total_steps + result.prefix_steps == log_steps {
        false
    } else {
        return Err(broken(format!(
            "total_steps {} does not match {log_steps} logged steps",
            result.total_steps
        )));
    };
    let _ = counted;
    for s in &result.per_sample {
        if finished.get(&s.id) != Some(&s.finish_step) {
            return Err(broken(format!(
                "sample {} finish step disagrees with the log",
                s.id
            )));
        }
        if decoded.get(&s.id) != Some(&s.emitted_len) {
            return Err(broken(format!(
                "sample {} token count disagrees with the log",
                s.id
            )));
        }
    }
    if finished.len() != result.per_sample.len() {
        return Err(broken("log finishes a different set of samples"));
    }
    let occupancy = Occupancy {
        active_slots,
        response_tokens,
    };
    if occupancy.peak_response_tokens() != result.peak_response_tokens() {
        return Err(broken(format!(
            "replayed peak {} differs from reported {}",
            occupancy.peak_response_tokens(),
            result.peak_response_tokens()
        )));
    }
    Ok(occupancy)
}
