//! Recorded computations and round accounting.

use serde::{Deserialize, Serialize};

use super::{SchedulerPolicy, SystemState};
use crate::composition::{CoreRegister, Value};
use crate::timer::{Branch, Image, Phase, RegisterValue, Tick, TimerParams};
use crate::topology::{ProcessId, Topology};

/// Statement executed by one step.
pub type Statement = Phase;

/// One variable or register field changed by a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum Change {
    Clock { from: Tick, to: Tick },
    W { from: Tick, to: Tick },
    Image { slot: usize, from: Image, to: Image },
    Register { slot: usize, from: RegisterValue, to: RegisterValue },
    Output { from: Value, to: Value },
    Shadow { from: Value, to: Value },
    Copy { slot: usize, from: Value, to: Value },
    CoreImage { slot: usize, from: (Value, Value), to: (Value, Value) },
    CoreRegister { slot: usize, from: CoreRegister, to: CoreRegister },
}

impl Change {
    pub fn touches_timer(&self) -> bool {
        matches!(self, Change::Clock { .. } | Change::W { .. })
    }
}

/// One executed step. `step` is 1-based: step `i` turns state `i-1` into
/// state `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub pid: ProcessId,
    pub stmt: Statement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    /// Set on a `Detect` step that performed a double reset.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub double_reset: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<Change>,
}

impl Event {
    pub fn changes_state(&self) -> bool {
        !self.changes.is_empty()
    }

    pub fn clock_change(&self) -> Option<(Tick, Tick)> {
        self.changes.iter().find_map(|c| match *c {
            Change::Clock { from, to } => Some((from, to)),
            _ => None,
        })
    }
}

/// A completed cycle: first read step through last write step, inclusive.
pub type Cycle = (u64, u64);

/// Round, local round, and per-process statement bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Accounting {
    /// Completed cycles per process, in order.
    pub cycles: Vec<Vec<Cycle>>,
    /// Step at which each global round completes.
    pub round_boundaries: Vec<u64>,
    /// `local_rounds[p][d]`: steps at which each `R_p^d`-round completes.
    pub local_rounds: Vec<Vec<Vec<u64>>>,
    /// Steps of S3/S6 executions per process.
    pub increments: Vec<Vec<u64>>,
    pub s4: Vec<Vec<u64>>,
    pub s5: Vec<Vec<u64>>,
    /// Steps of core-initiated double resets per process.
    pub double_resets: Vec<Vec<u64>>,
}

fn count_le(sorted: &[u64], step: u64) -> usize {
    sorted.partition_point(|&s| s <= step)
}

impl Accounting {
    pub fn rounds_completed_by(&self, step: u64) -> usize {
        count_le(&self.round_boundaries, step)
    }

    pub fn local_rounds_completed_by(&self, p: ProcessId, d: u32, step: u64) -> usize {
        count_le(&self.local_rounds[p][d as usize], step)
    }

    pub fn increments_by(&self, p: ProcessId, step: u64) -> usize {
        count_le(&self.increments[p], step)
    }

    /// Boundary step of global round `r` (1-based); round 0 ends at step 0.
    pub fn boundary(&self, r: usize) -> Option<u64> {
        if r == 0 {
            Some(0)
        } else {
            self.round_boundaries.get(r - 1).copied()
        }
    }

    /// End step of the round originating at state `origin` restricted to
    /// `members`: the earliest step by which every member completed a cycle
    /// whose first read comes after `origin`.
    pub fn round_end_from(&self, origin: u64, members: impl IntoIterator<Item = ProcessId>) -> Option<u64> {
        let mut end = origin;
        for q in members {
            let cycles = &self.cycles[q];
            let idx = cycles.partition_point(|&(start, _)| start <= origin);
            end = end.max(cycles.get(idx)?.1);
        }
        Some(end)
    }

    /// End steps of successive rounds originating at `origin`, up to
    /// `count` rounds or the end of the recorded computation.
    pub fn rounds_from(&self, origin: u64, count: usize) -> Vec<u64> {
        let n = self.cycles.len();
        let mut out = Vec::new();
        let mut at = origin;
        while out.len() < count {
            match self.round_end_from(at, 0..n) {
                Some(end) => {
                    out.push(end);
                    at = end;
                }
                None => break,
            }
        }
        out
    }
}

/// Incremental round accounting, fed one event at a time.
#[derive(Debug, Clone)]
pub struct AccountingBuilder {
    acct: Accounting,
    degrees: Vec<usize>,
    /// First read step of the cycle in progress, if it began in this run.
    open_cycle: Vec<Option<u64>>,
    /// Members of every `R_p^d` ball, by process.
    trackers: Vec<LocalTracker>,
    /// Trackers (indices) whose ball contains a process.
    containing: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct LocalTracker {
    p: ProcessId,
    d: usize,
    size: usize,
    start: u64,
    done: Vec<bool>,
    done_count: usize,
}

impl AccountingBuilder {
    pub fn new(topo: &Topology) -> Self {
        let n = topo.n();
        let diam = topo.diameter() as usize;
        let mut trackers = Vec::with_capacity(n * (diam + 1));
        let mut containing = vec![Vec::new(); n];
        for p in 0..n {
            for d in 0..=diam {
                let idx = trackers.len();
                let mut size = 0;
                for (q, list) in containing.iter_mut().enumerate() {
                    if topo.dist(p, q) as usize <= d {
                        list.push(idx);
                        size += 1;
                    }
                }
                trackers.push(LocalTracker {
                    p,
                    d,
                    size,
                    start: 0,
                    done: vec![false; n],
                    done_count: 0,
                });
            }
        }
        let acct = Accounting {
            cycles: vec![Vec::new(); n],
            round_boundaries: Vec::new(),
            local_rounds: vec![vec![Vec::new(); diam + 1]; n],
            increments: vec![Vec::new(); n],
            s4: vec![Vec::new(); n],
            s5: vec![Vec::new(); n],
            double_resets: vec![Vec::new(); n],
        };
        AccountingBuilder {
            acct,
            degrees: (0..n).map(|p| topo.degree(p)).collect(),
            open_cycle: vec![None; n],
            trackers,
            containing,
        }
    }

    pub fn observe(&mut self, ev: &Event) {
        let p = ev.pid;
        match ev.stmt {
            Phase::Read(0) => self.open_cycle[p] = Some(ev.step),
            Phase::Write(i) if i + 1 == self.degrees[p] => {
                if let Some(start) = self.open_cycle[p].take() {
                    self.close_cycle(p, start, ev.step);
                }
            }
            _ => {}
        }
        match ev.branch {
            Some(Branch::S3) | Some(Branch::S6) => self.acct.increments[p].push(ev.step),
            Some(Branch::S4) => self.acct.s4[p].push(ev.step),
            Some(Branch::S5) => self.acct.s5[p].push(ev.step),
            None => {}
        }
        if ev.double_reset {
            self.acct.double_resets[p].push(ev.step);
        }
    }

    fn close_cycle(&mut self, q: ProcessId, start: u64, end: u64) {
        self.acct.cycles[q].push((start, end));
        let diam = self.acct.local_rounds[0].len() - 1;
        for &idx in &self.containing[q] {
            let t = &mut self.trackers[idx];
            if start > t.start && !t.done[q] {
                t.done[q] = true;
                t.done_count += 1;
                if t.done_count == t.size {
                    t.start = end;
                    t.done.iter_mut().for_each(|d| *d = false);
                    t.done_count = 0;
                    self.acct.local_rounds[t.p][t.d].push(end);
                    if t.d == diam && t.p == 0 {
                        self.acct.round_boundaries.push(end);
                    }
                }
            }
        }
    }

    pub fn accounting(&self) -> &Accounting {
        &self.acct
    }

    pub fn finish(self) -> Accounting {
        self.acct
    }
}

/// Recomputes all accounting from an event list, without the incremental
/// trackers: rounds are rebuilt from the completed-cycle lists.
pub fn recompute_accounting(topo: &Topology, events: &[Event]) -> Accounting {
    let n = topo.n();
    let diam = topo.diameter();
    let mut cycles = vec![Vec::new(); n];
    let mut open = vec![None; n];
    let mut acct = Accounting {
        increments: vec![Vec::new(); n],
        s4: vec![Vec::new(); n],
        s5: vec![Vec::new(); n],
        double_resets: vec![Vec::new(); n],
        ..Accounting::default()
    };
    for ev in events {
        let p = ev.pid;
        match ev.stmt {
            Phase::Read(0) => open[p] = Some(ev.step),
            Phase::Write(i) if i + 1 == topo.degree(p) => {
                if let Some(start) = open[p].take() {
                    cycles[p].push((start, ev.step));
                }
            }
            _ => {}
        }
        match ev.branch {
            Some(b) if b.is_increment() => acct.increments[p].push(ev.step),
            Some(Branch::S4) => acct.s4[p].push(ev.step),
            Some(Branch::S5) => acct.s5[p].push(ev.step),
            _ => {}
        }
        if ev.double_reset {
            acct.double_resets[p].push(ev.step);
        }
    }
    acct.cycles = cycles;
    acct.round_boundaries = acct.rounds_from(0, usize::MAX);
    acct.local_rounds = (0..n)
        .map(|p| {
            (0..=diam)
                .map(|d| {
                    let ball = topo.ball(p, d).expect("radius within diameter");
                    let mut ends = Vec::new();
                    let mut at = 0;
                    while let Some(end) = acct.round_end_from(at, ball.iter().copied()) {
                        ends.push(end);
                        at = end;
                    }
                    ends
                })
                .collect()
        })
        .collect();
    acct
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The stop predicate held.
    Converged,
    /// The step or round budget ran out first.
    BudgetExhausted,
}

/// A recorded computation segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub topology: Topology,
    pub params: TimerParams,
    pub policy: SchedulerPolicy,
    pub initial: SystemState,
    pub events: Vec<Event>,
    pub accounting: Accounting,
    pub final_state: SystemState,
    pub outcome: Outcome,
}

impl Trace {
    /// Builds a trace from raw parts, recomputing the accounting and the
    /// final state by replay.
    pub fn from_events(
        topology: Topology,
        params: TimerParams,
        policy: SchedulerPolicy,
        initial: SystemState,
        events: Vec<Event>,
        outcome: Outcome,
    ) -> Self {
        let accounting = recompute_accounting(&topology, &events);
        let mut replay = Replay::new(&topology, initial.clone());
        for ev in &events {
            replay.apply(ev);
        }
        let final_state = replay.into_state();
        Trace {
            topology,
            params,
            policy,
            initial,
            events,
            accounting,
            final_state,
            outcome,
        }
    }

    pub fn len(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }

    pub fn round_boundaries(&self) -> &[u64] {
        &self.accounting.round_boundaries
    }

    /// Number of steps that changed any variable or register.
    pub fn state_changing_events(&self) -> usize {
        self.events.iter().filter(|e| e.changes_state()).count()
    }

    pub fn replay(&self) -> Replay<'_> {
        Replay::new(&self.topology, self.initial.clone())
    }

    /// State after `step` steps.
    pub fn state_at(&self, step: u64) -> SystemState {
        let mut r = self.replay();
        for ev in self.events.iter().take(step as usize) {
            r.apply(ev);
        }
        r.into_state()
    }
}

/// Re-applies recorded changes to a state.
pub struct Replay<'a> {
    topo: &'a Topology,
    state: SystemState,
}

impl<'a> Replay<'a> {
    pub fn new(topo: &'a Topology, state: SystemState) -> Self {
        Replay { topo, state }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn apply(&mut self, ev: &Event) {
        let p = ev.pid;
        for change in &ev.changes {
            match *change {
                Change::Clock { to, .. } => self.state.procs[p].clock = to,
                Change::W { to, .. } => self.state.procs[p].w = to,
                Change::Image { slot, to, .. } => self.state.procs[p].images[slot] = to,
                Change::Register { slot, to, .. } => self.state.registers[p][slot] = to,
                _ => {
                    let core = self.state.core.as_mut().expect("core change without a core layer");
                    match *change {
                        Change::Output { to, .. } => core.procs[p].output = to,
                        Change::Shadow { to, .. } => core.procs[p].shadow = to,
                        Change::Copy { slot, to, .. } => core.procs[p].copies[slot] = to,
                        Change::CoreImage { slot, to, .. } => {
                            core.procs[p].adv_out[slot] = to.0;
                            core.procs[p].adv_copy[slot] = to.1;
                        }
                        Change::CoreRegister { slot, to, .. } => core.registers[p][slot] = to,
                        _ => unreachable!(),
                    }
                }
            }
        }
        let proc = &mut self.state.procs[p];
        proc.phase = ev.stmt.next(self.topo.degree(p), proc.with_core);
        self.state.step = ev.step;
    }
}
