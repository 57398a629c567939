//! Static and runtime assignment of samples to micro groups and slots.
//!
//! * [`fptas_plan`] scales predicted lengths onto a coarse integer grid and
//!   packs them first-fit-decreasing into `N` groups of equal capacity.
//! * [`sjf_refill`] picks the shortest predicted pending sample for a slot
//!   that has just been released.
//! * [`lpt_plan`] and [`optimal_makespan`] are the post-hoc references that
//!   know the true lengths.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPlan {
    /// `mask[i] = (n, j)`: sample `i` sits in group `n` (1-based) at position `j`.
    pub mask: Vec<(usize, usize)>,
    /// Members of each group in position order; index `n - 1`.
    pub groups: Vec<Vec<usize>>,
    pub group_loads: Vec<u128>,
    pub scaled_lengths: Vec<u64>,
    pub scale_k: f64,
    pub capacity: u128,
    /// Samples that fit no group and were placed on the least-loaded one.
    pub overflow_ids: Vec<usize>,
}

impl GroupPlan {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Sample ids in group-major, position-minor order.
    pub fn order(&self) -> Vec<usize> {
        self.groups.iter().flatten().copied().collect()
    }

    pub fn max_scaled_len(&self) -> u64 {
        self.scaled_lengths.iter().copied().max().unwrap_or(0)
    }

    /// Plan export: metadata comment, header, one row per sample id.
    pub fn to_csv(&self) -> String {
        let overflow: Vec<String> = self.overflow_ids.iter().map(|i| i.to_string()).collect();
        let mut out = format!(
            "# K={} capacity={} overflow={}\nid,group,position,scaled_len\n",
            self.scale_k,
            self.capacity,
            overflow.join(";")
        );
        for (id, &(group, position)) in self.mask.iter().enumerate() {
            out.push_str(&format!(
                "{id},{group},{position},{}\n",
                self.scaled_lengths[id]
            ));
        }
        out
    }
}

pub fn fptas_plan(pred_lengths: &[u64], n_groups: usize, epsilon: f64) -> Result<GroupPlan> {
    if n_groups == 0 {
        return Err(Error::config("n_groups", "must be >= 1"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::config("epsilon", "must be a positive finite number"));
    }
    if pred_lengths.is_empty() {
        return Err(Error::Data("cannot plan an empty set of samples".into()));
    }
    if let Some(id) = pred_lengths.iter().position(|&l| l == 0) {
        return Err(Error::Data(format!("predicted length of sample {id} is 0")));
    }

    let total: u128 = pred_lengths.iter().map(|&l| l as u128).sum();
    let scale_k = epsilon * total as f64 / n_groups as f64;
    if !(scale_k.is_finite() && scale_k > 0.0) {
        return Err(Error::config(
            "epsilon",
            format!("scale factor K = {scale_k} is unusable"),
        ));
    }

    let scaled_lengths: Vec<u64> = pred_lengths
        .iter()
        .map(|&l| {
            let s = (l as f64 / scale_k).ceil();
            if s >= u64::MAX as f64 {
                Err(Error::config(
                    "epsilon",
                    format!("too small: scaled length of {l} overflows 64 bits"),
                ))
            } else {
                Ok(s as u64)
            }
        })
        .collect::<Result<_>>()?;
    let scaled_total: u128 = scaled_lengths.iter().map(|&l| l as u128).sum();
    let capacity = scaled_total.div_ceil(n_groups as u128);

    let mut order: Vec<usize> = (0..pred_lengths.len()).collect();
    order.sort_by(|&a, &b| scaled_lengths[b].cmp(&scaled_lengths[a]).then(a.cmp(&b)));

    let mut group_loads = vec![0u128; n_groups];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    let mut mask = vec![(0, 0); pred_lengths.len()];
    let mut overflow_ids = Vec::new();

    for i in order {
        let item = scaled_lengths[i] as u128;
        let target = match group_loads.iter().position(|&load| load + item <= capacity) {
            Some(n) => n,
            None => {
                overflow_ids.push(i);
                // least-loaded, lowest index on ties
                (0..n_groups)
                    .min_by_key(|&n| (group_loads[n], n))
                    .expect("n_groups >= 1")
            }
        };
        mask[i] = (target + 1, groups[target].len());
        groups[target].push(i);
        group_loads[target] += item;
    }

    Ok(GroupPlan {
        mask,
        groups,
        group_loads,
        scaled_lengths,
        scale_k,
        capacity,
        overflow_ids,
    })
}

/// Runtime bookkeeping for shortest-job-first refill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotQueueState {
    /// Number of samples ever assigned to each slot.
    pub pos: Vec<usize>,
    finished: Vec<bool>,
    started: Vec<bool>,
    record: Vec<Option<(usize, usize)>>,
}

impl SlotQueueState {
    pub fn new(n_samples: usize, n_slots: usize) -> Self {
        SlotQueueState {
            pos: vec![0; n_slots],
            finished: vec![false; n_samples],
            started: vec![false; n_samples],
            record: vec![None; n_samples],
        }
    }

    /// Records `id` as running on `slot`; returns its position in that slot.
    pub fn assign(&mut self, id: usize, slot: usize) -> usize {
        let position = self.pos[slot];
        self.started[id] = true;
        self.record[id] = Some((slot, position));
        self.pos[slot] += 1;
        position
    }

    pub fn mark_finished(&mut self, id: usize) {
        debug_assert!(self.started[id], "sample {id} finished before starting");
        self.finished[id] = true;
    }

    /// Marks a sample complete without it ever occupying a slot.
    pub fn retire(&mut self, id: usize) {
        self.started[id] = true;
        self.finished[id] = true;
    }

    pub fn is_started(&self, id: usize) -> bool {
        self.started[id]
    }

    pub fn is_finished(&self, id: usize) -> bool {
        self.finished[id]
    }

    /// `(slot, position)` the sample was assigned to, if any.
    pub fn record(&self, id: usize) -> Option<(usize, usize)> {
        self.record[id]
    }

    pub fn pending(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.started.len()).filter(|&i| !self.started[i] && !self.finished[i])
    }
}

/// Picks the pending sample with the shortest predicted length for `slot`
/// (ties to the lowest id) and records it; `None` when nothing is pending.
pub fn sjf_refill(state: &mut SlotQueueState, slot: usize, pred_lengths: &[u64]) -> Option<usize> {
    let next = state.pending().min_by_key(|&i| (pred_lengths[i], i))?;
    state.assign(next, slot);
    Some(next)
}

/// Per-slot job queues with their loads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotSchedule {
    pub queues: Vec<Vec<usize>>,
    pub loads: Vec<u64>,
    pub makespan: u64,
}

impl SlotSchedule {
    fn from_assignment(
        lengths: &[u64],
        slot_of: &[usize],
        order: &[usize],
        n_slots: usize,
    ) -> Self {
        let mut queues = vec![Vec::new(); n_slots];
        let mut loads = vec![0u64; n_slots];
        for &job in order {
            let s = slot_of[job];
            queues[s].push(job);
            loads[s] += lengths[job];
        }
        let makespan = loads.iter().copied().max().unwrap_or(0);
        SlotSchedule {
            queues,
            loads,
            makespan,
        }
    }
}

fn check_slots(n_slots: usize) -> Result<()> {
    if n_slots == 0 {
        Err(Error::config("n_slots", "must be >= 1"))
    } else {
        Ok(())
    }
}

/// Jobs by descending length, ties by ascending id.
fn longest_first(lengths: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
    order
}

/// Longest-processing-time list scheduling on `n_slots` identical slots.
pub fn lpt_plan(lengths: &[u64], n_slots: usize) -> Result<SlotSchedule> {
    check_slots(n_slots)?;
    let order = longest_first(lengths);
    let mut loads = vec![0u64; n_slots];
    let mut slot_of = vec![0; lengths.len()];
    for &job in &order {
        let s = (0..n_slots)
            .min_by_key(|&s| (loads[s], s))
            .expect("n_slots >= 1");
        slot_of[job] = s;
        loads[s] += lengths[job];
    }
    Ok(SlotSchedule::from_assignment(
        lengths, &slot_of, &order, n_slots,
    ))
}

pub const DEFAULT_EXACT_MAX_JOBS: usize = 16;

/// Trivial makespan lower bound: `max(max job, ceil(total / slots))`.
pub fn makespan_lower_bound(lengths: &[u64], n_slots: usize) -> u64 {
    let total: u64 = lengths.iter().sum();
    let longest = lengths.iter().copied().max().unwrap_or(0);
    longest.max(total.div_ceil(n_slots.max(1) as u64))
}

pub fn optimal_makespan(lengths: &[u64], n_slots: usize) -> Result<u64> {
    Ok(optimal_schedule(lengths, n_slots, DEFAULT_EXACT_MAX_JOBS)?.makespan)
}

/// Exact minimum-makespan schedule by depth-first branch and bound.
pub fn optimal_schedule(lengths: &[u64], n_slots: usize, max_jobs: usize) -> Result<SlotSchedule> {
    check_slots(n_slots)?;
    if lengths.len() > max_jobs {
        return Err(Error::Capacity(format!(
            "exact search limited to {max_jobs} jobs, got {}; use lpt_plan instead",
            lengths.len()
        )));
    }
    let order = longest_first(lengths);
    let sorted: Vec<u64> = order.iter().map(|&j| lengths[j]).collect();
    // suffix[i] = total work of jobs i.. in sorted order
    let mut suffix = vec![0u64; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        suffix[i] = suffix[i + 1] + sorted[i];
    }

    let incumbent = lpt_plan(lengths, n_slots)?;
    let mut search = BranchAndBound {
        sorted: &sorted,
        suffix: &suffix,
        n_slots,
        floor: makespan_lower_bound(lengths, n_slots),
        best: incumbent.makespan,
        best_assignment: None,
        loads: vec![0; n_slots],
        assignment: vec![0; sorted.len()],
    };
    if search.best > search.floor {
        search.descend(0, 0);
    }
    match search.best_assignment {
        None => Ok(incumbent),
        Some(sorted_slots) => {
            let mut slot_of = vec![0; lengths.len()];
            for (rank, &job) in order.iter().enumerate() {
                slot_of[job] = sorted_slots[rank];
            }
            Ok(SlotSchedule::from_assignment(
                lengths, &slot_of, &order, n_slots,
            ))
        }
    }
}

struct BranchAndBound<'a> {
    sorted: &'a [u64],
    suffix: &'a [u64],
    n_slots: usize,
    floor: u64,
    best: u64,
    best_assignment: Option<Vec<usize>>,
    loads: Vec<u64>,
    assignment: Vec<usize>,
}

impl BranchAndBound<'_> {
    fn descend(&mut self, depth: usize, current_max: u64) {
        if depth == self.sorted.len() {
            if current_max < self.best {
                self.best = current_max;
                self.best_assignment = Some(self.assignment.clone());
            }
            return;
        }
        let assigned: u64 = self.loads.iter().sum();
        let bound = current_max.max((assigned + self.suffix[depth]).div_ceil(self.n_slots as u64));
        if bound >= self.best {
            return;
        }
        let job = self.sorted[depth];
        for s in 0..self.n_slots {
            // slots with equal load are interchangeable
            if self.loads[..s].contains(&self.loads[s]) {
                continue;
            }
            let new_load = self.loads[s] + job;
            if new_load >= self.best {
                continue;
            }
            self.loads[s] = new_load;
            self.assignment[depth] = s;
            self.descend(depth + 1, current_max.max(new_load));
            self.loads[s] -= job;
            if self.best <= self.floor {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fptas_hand_trace_basic() {
        let plan = fptas_plan(&[4, 3, 3, 2], 2, 0.5).unwrap();
        assert_eq!(plan.scale_k, 3.0);
        assert_eq!(plan.scaled_lengths, vec![2, 1, 1, 1]);
        assert_eq!(plan.capacity, 3);
        assert_eq!(plan.mask, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
        assert_eq!(plan.group_loads, vec![3, 2]);
        assert!(plan.overflow_ids.is_empty());
    }

    #[test]
    fn fptas_hand_trace_uniform() {
        let plan = fptas_plan(&[2, 2, 2, 2], 2, 1.0).unwrap();
        assert_eq!(plan.scale_k, 4.0);
        assert_eq!(plan.scaled_lengths, vec![1, 1, 1, 1]);
        assert_eq!(plan.capacity, 2);
        assert_eq!(plan.mask, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
    }

    #[test]
    fn fptas_hand_trace_fallback() {
        let plan = fptas_plan(&[10, 1, 1, 1], 2, 0.1).unwrap();
        assert!((plan.scale_k - 0.65).abs() < 1e-12);
        assert_eq!(plan.scaled_lengths, vec![16, 2, 2, 2]);
        assert_eq!(plan.capacity, 11);
        assert_eq!(plan.overflow_ids, vec![0]);
        assert_eq!(plan.mask, vec![(1, 0), (2, 0), (2, 1), (2, 2)]);
        assert_eq!(plan.group_loads, vec![16, 6]);
    }

    #[test]
    fn fptas_rejects_bad_config() {
        assert!(matches!(
            fptas_plan(&[1, 2], 0, 0.5),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            fptas_plan(&[1, 2], 2, 0.0),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            fptas_plan(&[1, 2], 2, -1.0),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            fptas_plan(&[1, 2], 2, f64::NAN),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn fptas_tiny_epsilon_does_not_wrap() {
        match fptas_plan(&[1_000_000, 3], 2, 1e-300) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "epsilon"),
            other => panic!("{other:?}"),
        }
        // small but representable: loads held in 128 bits
        let plan = fptas_plan(&[1 << 62, 1 << 62], 1, 2f64.powf(-64.5)).unwrap();
        assert!(plan.capacity > u64::MAX as u128);
    }

    #[test]
    fn plan_csv_layout() {
        let plan = fptas_plan(&[10, 1, 1, 1], 2, 0.1).unwrap();
        let csv = plan.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# K=0.65 capacity=11 overflow=0");
        assert_eq!(lines.next().unwrap(), "id,group,position,scaled_len");
        assert_eq!(lines.next().unwrap(), "0,1,0,16");
        assert_eq!(lines.last().unwrap(), "3,2,2,2");
    }

    #[test]
    fn sjf_picks_minimum_then_exhausts() {
        let preds = [50, 20, 90];
        let mut st = SlotQueueState::new(3, 1);
        assert_eq!(sjf_refill(&mut st, 0, &preds), Some(1));
        assert_eq!(st.record(1), Some((0, 0)));
        assert_eq!(sjf_refill(&mut st, 0, &preds), Some(0));
        assert_eq!(sjf_refill(&mut st, 0, &preds), Some(2));
        assert_eq!(st.pos, vec![3]);
        assert_eq!(sjf_refill(&mut st, 0, &preds), None);
    }

    #[test]
    fn sjf_empty_candidates() {
        let mut st = SlotQueueState::new(0, 2);
        assert_eq!(sjf_refill(&mut st, 1, &[]), None);
        assert_eq!(st.pos, vec![0, 0]);
    }

    #[test]
    fn sjf_tie_goes_to_lower_id() {
        let mut st = SlotQueueState::new(2, 1);
        assert_eq!(sjf_refill(&mut st, 0, &[30, 30]), Some(0));
    }

    #[test]
    fn sjf_skips_finished_and_started() {
        let mut st = SlotQueueState::new(3, 2);
        st.assign(1, 0);
        st.mark_finished(1);
        st.assign(0, 1);
        assert_eq!(sjf_refill(&mut st, 0, &[1, 1, 99]), Some(2));
        assert_eq!(st.record(2), Some((0, 1)));
    }

    #[test]
    fn lpt_hand_traces() {
        let s = lpt_plan(&[5, 3, 4, 2], 2).unwrap();
        assert_eq!(s.queues, vec![vec![0, 3], vec![2, 1]]);
        assert_eq!(s.makespan, 7);
        assert_eq!(lpt_plan(&[7], 3).unwrap().makespan, 7);
        assert_eq!(lpt_plan(&[1, 1, 1, 1], 2).unwrap().makespan, 2);
        assert!(lpt_plan(&[1], 0).is_err());
    }

    #[test]
    fn exact_worked_examples() {
        assert_eq!(optimal_makespan(&[5, 3, 4, 2], 2).unwrap(), 7);
        assert_eq!(optimal_makespan(&[9, 1, 1, 1], 2).unwrap(), 9);
        assert_eq!(optimal_makespan(&[3, 8, 2, 6], 1).unwrap(), 19);
        assert_eq!(optimal_makespan(&[], 3).unwrap(), 0);
    }

    #[test]
    fn exact_beats_lpt_on_classic_instance() {
        // LPT gives 11, optimum is 9
        let jobs = [5, 5, 4, 4, 3, 3, 3];
        assert_eq!(lpt_plan(&jobs, 3).unwrap().makespan, 11);
        let s = optimal_schedule(&jobs, 3, 16).unwrap();
        assert_eq!(s.makespan, 9);
        let mut all: Vec<usize> = s.queues.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn exact_rejects_large_instances() {
        let jobs = vec![1u64; 17];
        assert!(matches!(
            optimal_makespan(&jobs, 2),
            Err(Error::Capacity(_))
        ));
        assert_eq!(optimal_schedule(&jobs, 2, 20).unwrap().makespan, 9);
    }
}
