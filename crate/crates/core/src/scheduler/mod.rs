//! Asynchronous execution of process steps over shared link registers.
//!
//! [`run`] repeatedly asks a [`Picker`] for a process, executes that
//! process's next atomic step against the registers, and records the step
//! in a [`Trace`] while maintaining round accounting incrementally.

mod policy;
mod trace;

pub use policy::{Picker, PolicyKind, SchedulerPolicy};
pub use trace::{
    recompute_accounting, Accounting, AccountingBuilder, Change, Cycle, Event, Outcome, Replay, Statement, Trace,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::{CoreLayer, CoreSystem, ResetAction};
use crate::timer::{Image, Phase, ProcessTimerState, RegisterValue, TimerParams};
use crate::topology::{ProcessId, Topology};

/// Vector of process configurations: timer variables, program counters, and
/// the registers each process writes, plus the optional core layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub procs: Vec<ProcessTimerState>,
    /// `registers[p][slot]` is `Register_pq` for `q = neighbors(p)[slot]`.
    pub registers: Vec<Vec<RegisterValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core: Option<CoreLayer>,
    /// Number of steps taken to reach this state.
    pub step: u64,
}

impl SystemState {
    /// The timer-final state, every process at the start of a cycle.
    pub fn timer_final(topo: &Topology, params: &TimerParams) -> Self {
        SystemState {
            procs: (0..topo.n())
                .map(|p| ProcessTimerState::timer_final(topo.degree(p), params))
                .collect(),
            registers: (0..topo.n())
                .map(|p| vec![RegisterValue::timer_final(params); topo.degree(p)])
                .collect(),
            core: None,
            step: 0,
        }
    }

    /// Every variable, image, register field, and program counter drawn
    /// uniformly from its domain.
    pub fn random<R: Rng>(topo: &Topology, params: &TimerParams, rng: &mut R) -> Self {
        let mut state = Self::timer_final(topo, params);
        for p in 0..topo.n() {
            randomize_process(&mut state, topo, params, p, rng);
        }
        state
    }

    /// Attaches a core layer; every process cycle gains the detection and
    /// core-step slots.
    pub fn with_core(mut self, core: CoreLayer) -> Self {
        for proc in &mut self.procs {
            proc.with_core = true;
        }
        self.core = Some(core);
        self
    }

    pub fn n(&self) -> usize {
        self.procs.len()
    }

    pub fn clock(&self, p: ProcessId) -> u32 {
        self.procs[p].clock
    }

    pub fn w(&self, p: ProcessId) -> u32 {
        self.procs[p].w
    }

    /// `x_p[q]`.
    pub fn x(&self, topo: &Topology, p: ProcessId, q: ProcessId) -> Option<u32> {
        topo.slot_of(p, q).map(|slot| self.procs[p].images[slot].x)
    }

    /// Whether every process configuration lies within its value domains
    /// and register layout matches the topology.
    pub fn well_formed(&self, topo: &Topology, params: &TimerParams) -> bool {
        let t = params.t_final();
        let cap = params.w_cap();
        self.procs.len() == topo.n()
            && self.registers.len() == topo.n()
            && (0..topo.n()).all(|p| {
                self.procs[p].degree() == topo.degree(p)
                    && self.procs[p].in_domain(params)
                    && self.registers[p].len() == topo.degree(p)
                    && self.registers[p]
                        .iter()
                        .all(|r| r.clk_img <= t && r.clk_echo <= t && r.w_img <= cap && r.w_echo <= cap)
            })
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Rewrites every field of `p`'s configuration with a uniform in-domain value.
pub fn randomize_process<R: Rng>(
    state: &mut SystemState,
    topo: &Topology,
    params: &TimerParams,
    p: ProcessId,
    rng: &mut R,
) {
    let t = params.t_final();
    let cap = params.w_cap();
    let proc = &mut state.procs[p];
    proc.clock = rng.random_range(0..=t);
    proc.w = rng.random_range(0..=cap);
    for im in &mut proc.images {
        *im = Image {
            x: rng.random_range(0..=t),
            y: rng.random_range(0..=cap),
            r: rng.random_range(0..=t),
            s: rng.random_range(0..=cap),
        };
    }
    let phases = Phase::cycle(topo.degree(p), proc.with_core);
    proc.phase = phases[rng.random_range(0..phases.len())];
    for reg in &mut state.registers[p] {
        *reg = RegisterValue {
            clk_img: rng.random_range(0..=t),
            w_img: rng.random_range(0..=cap),
            clk_echo: rng.random_range(0..=t),
            w_echo: rng.random_range(0..=cap),
        };
    }
}

fn image_change(slot: usize, from: Image, to: Image, out: &mut Vec<Change>) {
    if from != to {
        out.push(Change::Image { slot, from, to });
    }
}

fn timer_changes(before: &ProcessTimerState, after: &ProcessTimerState, out: &mut Vec<Change>) {
    if before.clock != after.clock {
        out.push(Change::Clock {
            from: before.clock,
            to: after.clock,
        });
    }
    if before.w != after.w {
        out.push(Change::W {
            from: before.w,
            to: after.w,
        });
    }
}

/// Executes the next atomic step of process `p`, returning the recorded event.
pub fn execute_step(topo: &Topology, params: &TimerParams, state: &mut SystemState, p: ProcessId) -> Event {
    let step = state.step + 1;
    let stmt = state.procs[p].phase;
    let mut changes = Vec::new();
    let mut branch = None;
    let mut double_reset = false;

    match stmt {
        Phase::Read(slot) => {
            let q = topo.neighbors(p)[slot];
            let back = topo.reverse_slot(p, slot);
            let reg = state.registers[q][back];
            let from = state.procs[p].images[slot];
            state.procs[p].step_read(slot, reg).expect("phase checked");
            image_change(slot, from, state.procs[p].images[slot], &mut changes);
            if let Some(core) = state.core.as_mut() {
                let creg = core.registers[q][back];
                let me = &mut core.procs[p];
                let from = (me.adv_out[slot], me.adv_copy[slot]);
                me.read(slot, &creg);
                let to = (me.adv_out[slot], me.adv_copy[slot]);
                if from != to {
                    changes.push(Change::CoreImage { slot, from, to });
                }
            }
        }
        Phase::Detect => {
            let core = state.core.as_ref().expect("detect slot requires a core layer");
            let detected = core.procs[p].detect_fault();
            let proc = &mut state.procs[p];
            let before = proc.clone();
            if crate::composition::maybe_double_reset(detected, proc.clock, params) == ResetAction::Reset {
                proc.double_reset();
                double_reset = true;
            }
            proc.advance();
            timer_changes(&before, proc, &mut changes);
        }
        Phase::ComputeW => {
            let before = state.procs[p].clone();
            state.procs[p].step_compute_w(params).expect("phase checked");
            timer_changes(&before, &state.procs[p], &mut changes);
        }
        Phase::Dispatch => {
            let before = state.procs[p].clone();
            branch = state.procs[p].step_compute_clock(params).expect("phase checked");
            timer_changes(&before, &state.procs[p], &mut changes);
        }
        Phase::CoreStep => {
            let proc = &mut state.procs[p];
            let clock = proc.clock;
            let clocks: Vec<u32> = proc.images.iter().map(|im| im.x).collect();
            let core = state.core.as_mut().expect("core slot requires a core layer");
            let gate = core.gate;
            let me = &mut core.procs[p];
            let before = me.clone();
            me.core_step(clock, &clocks, &gate, params);
            if before.output != me.output {
                changes.push(Change::Output {
                    from: before.output,
                    to: me.output,
                });
            }
            if before.shadow != me.shadow {
                changes.push(Change::Shadow {
                    from: before.shadow,
                    to: me.shadow,
                });
            }
            for (slot, (&a, &b)) in before.copies.iter().zip(&me.copies).enumerate() {
                if a != b {
                    changes.push(Change::Copy { slot, from: a, to: b });
                }
            }
            proc.advance();
        }
        Phase::Write(slot) => {
            let reg = state.procs[p].step_write(slot).expect("phase checked");
            let from = state.registers[p][slot];
            if from != reg {
                changes.push(Change::Register { slot, from, to: reg });
            }
            state.registers[p][slot] = reg;
            if let Some(core) = state.core.as_mut() {
                let creg = core.procs[p].write(slot);
                let from = core.registers[p][slot];
                if from != creg {
                    changes.push(Change::CoreRegister { slot, from, to: creg });
                }
                core.registers[p][slot] = creg;
            }
        }
    }
    state.step = step;
    Event {
        step,
        pid: p,
        stmt,
        branch,
        double_reset,
        changes,
    }
}

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_steps: Option<u64>,
    pub max_rounds: Option<u64>,
}

impl Budget {
    pub fn steps(n: u64) -> Self {
        Budget {
            max_steps: Some(n),
            max_rounds: None,
        }
    }

    pub fn rounds(n: u64) -> Self {
        Budget {
            max_steps: None,
            max_rounds: Some(n),
        }
    }

    fn exhausted(&self, steps: u64, rounds: usize) -> bool {
        self.max_steps.is_some_and(|m| steps >= m) || self.max_rounds.is_some_and(|m| rounds as u64 >= m)
    }
}

/// Caller-supplied state predicate evaluated after every step.
pub type StopPredicate<'a> = &'a dyn Fn(&Topology, &SystemState) -> bool;

/// Runs a computation from `initial` until `stop` holds or the budget runs
/// out. The stop predicate is also checked on the initial state.
pub fn run(
    topo: &Topology,
    params: &TimerParams,
    initial: SystemState,
    policy: SchedulerPolicy,
    budget: Budget,
    stop: Option<StopPredicate<'_>>,
) -> Trace {
    assert!(budget.max_steps.is_some() || budget.max_rounds.is_some(), "unbounded run");
    assert!(initial.well_formed(topo, params), "initial state is not well formed");
    let mut picker = Picker::new(policy, topo.n());
    let mut acct = AccountingBuilder::new(topo);
    let mut state = initial.clone();
    let mut events = Vec::new();
    let holds = |s: &SystemState| stop.is_some_and(|f| f(topo, s));

    let mut outcome = Outcome::BudgetExhausted;
    if holds(&state) {
        outcome = Outcome::Converged;
    } else {
        while !budget.exhausted(events.len() as u64, acct.accounting().round_boundaries.len()) {
            let p = picker.pick();
            let ev = execute_step(topo, params, &mut state, p);
            acct.observe(&ev);
            events.push(ev);
            if holds(&state) {
                outcome = Outcome::Converged;
                break;
            }
        }
    }

    Trace {
        topology: topo.clone(),
        params: *params,
        policy,
        initial,
        events,
        accounting: acct.finish(),
        final_state: state,
        outcome,
    }
}

/// Runs with a fixed process sequence instead of a policy.
pub fn run_sequence(
    topo: &Topology,
    params: &TimerParams,
    initial: SystemState,
    sequence: impl IntoIterator<Item = ProcessId>,
) -> Trace {
    let mut acct = AccountingBuilder::new(topo);
    let mut state = initial.clone();
    let mut events = Vec::new();
    for p in sequence {
        let ev = execute_step(topo, params, &mut state, p);
        acct.observe(&ev);
        events.push(ev);
    }
    Trace {
        topology: topo.clone(),
        params: *params,
        policy: SchedulerPolicy::round_robin(),
        initial,
        events,
        accounting: acct.finish(),
        final_state: state,
        outcome: Outcome::BudgetExhausted,
    }
}

/// Flags describing a segment `[from, to]` of a trace (state indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentFlags {
    pub reset_free: bool,
    pub based: bool,
    pub rising: bool,
}

/// Start state of the longest reset-free suffix ending at `to` whose
/// steps all lie after round three, and the first state of that suffix at
/// which every process has completed a full register-read sweep.
fn rising_start(tr: &Trace, to: u64) -> Option<u64> {
    let base = tr.accounting.boundary(3)?;
    let last_reset = tr.events[..to as usize]
        .iter()
        .rev()
        .find(|e| matches!(e.branch, Some(b) if b.is_reset()))
        .map(|e| e.step)
        .unwrap_or(0);
    let seg_start = base.max(last_reset);
    let n = tr.topology.n();
    let mut read_start: Vec<Option<u64>> = vec![None; n];
    let mut swept = vec![false; n];
    let mut remaining = n;
    for ev in &tr.events[seg_start as usize..to as usize] {
        let p = ev.pid;
        if ev.stmt == Phase::Read(0) {
            read_start[p] = Some(ev.step);
        }
        if let Phase::Read(i) = ev.stmt {
            if i + 1 == tr.topology.degree(p) && read_start[p].is_some() && !swept[p] {
                swept[p] = true;
                remaining -= 1;
                if remaining == 0 {
                    return Some(ev.step);
                }
            }
        }
    }
    None
}

pub fn classify_segment(tr: &Trace, from: u64, to: u64) -> SegmentFlags {
    assert!(from <= to && to <= tr.len(), "segment out of range");
    let reset_free = tr.events[from as usize..to as usize]
        .iter()
        .all(|e| !matches!(e.branch, Some(b) if b.is_reset()));
    let based = tr.accounting.boundary(3).is_some_and(|b| from >= b);
    let rising = based && reset_free && rising_start(tr, to).is_some_and(|s| s <= from);
    SegmentFlags {
        reset_free,
        based,
        rising,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge() -> (Topology, TimerParams) {
        (Topology::path(2).unwrap(), TimerParams::minimal(1).unwrap())
    }

    fn blank(topo: &Topology) -> SystemState {
        let mut s = SystemState::timer_final(topo, &TimerParams::minimal(topo.diameter()).unwrap());
        for p in &mut s.procs {
            p.clock = 0;
            p.w = 0;
            p.images.iter_mut().for_each(|im| *im = Image::default());
        }
        for regs in &mut s.registers {
            regs.iter_mut().for_each(|r| {
                *r = RegisterValue {
                    clk_img: 0,
                    w_img: 0,
                    clk_echo: 0,
                    w_echo: 0,
                }
            });
        }
        s
    }

    fn final_pred(topo: &Topology, s: &SystemState) -> bool {
        crate::checkers::is_timer_final(topo, s, &TimerParams::minimal(topo.diameter()).unwrap())
    }

    #[test]
    fn timer_final_is_closed() {
        let topo = Topology::grid(3, 3).unwrap();
        let params = TimerParams::minimal(topo.diameter()).unwrap();
        for kind in PolicyKind::ALL {
            let tr = run(
                &topo,
                &params,
                SystemState::timer_final(&topo, &params),
                SchedulerPolicy::new(kind, 4, 9),
                Budget::steps(10_000),
                None,
            );
            assert_eq!(tr.len(), 10_000);
            assert_eq!(tr.state_changing_events(), 0);
        }
    }

    #[test]
    fn edge_converges_from_blank() {
        let (topo, params) = edge();
        let tr = run(
            &topo,
            &params,
            blank(&topo),
            SchedulerPolicy::round_robin(),
            Budget::steps(100_000),
            Some(&final_pred),
        );
        assert!(tr.converged());
        let f = &tr.final_state;
        assert_eq!((f.clock(0), f.clock(1)), (11, 11));
        assert_eq!((f.w(0), f.w(1)), (4, 4));
    }

    #[test]
    fn random_seeds_reach_same_final_state() {
        let (topo, params) = edge();
        let finals: Vec<_> = [1, 2]
            .iter()
            .map(|&seed| {
                let tr = run(
                    &topo,
                    &params,
                    blank(&topo),
                    SchedulerPolicy::new(PolicyKind::SeededRandom, seed, 8),
                    Budget::steps(100_000),
                    Some(&final_pred),
                );
                assert!(tr.converged());
                let mut s = tr.final_state;
                s.step = 0;
                for p in &mut s.procs {
                    p.phase = Phase::Read(0);
                }
                s
            })
            .collect();
        assert_eq!(finals[0], finals[1]);
    }

    #[test]
    fn alternation_first_boundary() {
        let (topo, params) = edge();
        let tr = run_sequence(&topo, &params, blank(&topo), (0..40).map(|i| i % 2));
        assert_eq!(tr.round_boundaries()[0], 8);
        assert_eq!(tr.accounting, recompute_accounting(&topo, &tr.events));
    }

    #[test]
    fn starved_process_delays_round() {
        let topo = Topology::path(3).unwrap();
        let params = TimerParams::minimal(2).unwrap();
        // process 2 idles for the first 100 steps
        let seq = (0..100).map(|i| i % 2).chain((0..60).map(|i| i % 3));
        let tr = run_sequence(&topo, &params, blank(&topo), seq);
        let cycle_len = Phase::cycle(topo.degree(2), false).len() as u64;
        assert!(tr.round_boundaries()[0] >= 100 + cycle_len);
    }

    #[test]
    fn mid_cycle_start_is_not_a_cycle() {
        let (topo, params) = edge();
        let mut s = blank(&topo);
        s.procs[0].phase = Phase::Dispatch;
        let tr = run_sequence(&topo, &params, s, (0..16).map(|i| i % 2));
        // p0's first full cycle starts at its third step (global step 5)
        assert_eq!(tr.accounting.cycles[0][0], (5, 11));
        assert_eq!(tr.round_boundaries()[0], 11);
    }

    #[test]
    fn accounting_consistency_on_random_runs() {
        let topo = Topology::random_connected(7, 9, 5).unwrap();
        let params = TimerParams::minimal(topo.diameter()).unwrap();
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = SystemState::random(&topo, &params, &mut rng);
            let kind = PolicyKind::ALL[seed as usize % 3];
            let tr = run(
                &topo,
                &params,
                init,
                SchedulerPolicy::new(kind, seed, 12),
                Budget::rounds(40),
                None,
            );
            assert_eq!(tr.accounting, recompute_accounting(&topo, &tr.events));
            let d = topo.diameter();
            for p in 0..topo.n() {
                assert_eq!(tr.accounting.local_rounds[p][d as usize], tr.accounting.round_boundaries);
                assert_eq!(tr.accounting.local_rounds[p][0].len(), tr.accounting.cycles[p].len());
                let incs = tr.events.iter().filter(|e| e.pid == p && matches!(e.branch, Some(b) if b.is_increment())).count();
                assert_eq!(tr.accounting.increments[p].len(), incs);
                for step in (0..=tr.len()).step_by(37) {
                    for dd in 1..=d {
                        assert!(
                            tr.accounting.local_rounds_completed_by(p, dd - 1, step)
                                >= tr.accounting.local_rounds_completed_by(p, dd, step)
                        );
                    }
                }
            }
            let replayed = Trace::from_events(
                topo.clone(),
                params,
                tr.policy,
                tr.initial.clone(),
                tr.events.clone(),
                tr.outcome,
            );
            assert_eq!(replayed.final_state, tr.final_state);
            for w in tr.round_boundaries().windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn determinism() {
        let topo = Topology::ring(5).unwrap();
        let params = TimerParams::minimal(2).unwrap();
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let init = SystemState::random(&topo, &params, &mut rng);
            run(
                &topo,
                &params,
                init,
                SchedulerPolicy::new(PolicyKind::AdversarialAging, 3, 7),
                Budget::steps(3000),
                None,
            )
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn s4_write_preserves_echoes() {
        // p0 above T-D sees a gapped neighbor image and resets; its next
        // writes carry 0,0 plus the echoes from its last read.
        let (topo, params) = edge();
        let mut s = SystemState::timer_final(&topo, &params);
        s.registers[1][0].clk_img = 3;
        let tr = run_sequence(&topo, &params, s, [0, 0, 0, 0]);
        assert_eq!(tr.events[2].branch, Some(crate::timer::Branch::S4));
        let reg = tr.final_state.registers[0][0];
        assert_eq!(reg, RegisterValue { clk_img: 0, w_img: 0, clk_echo: 3, w_echo: params.w_cap() });
    }

    #[test]
    fn segment_flags() {
        let topo = Topology::path(3).unwrap();
        let params = TimerParams::minimal(2).unwrap();
        let mut s = SystemState::timer_final(&topo, &params);
        s.procs[1].clock = 13;
        s.procs[1].w = 2;
        let tr = run(
            &topo,
            &params,
            s,
            SchedulerPolicy::round_robin(),
            Budget::steps(200_000),
            Some(&|t: &Topology, st: &SystemState| {
                crate::checkers::is_timer_final(t, st, &TimerParams::minimal(2).unwrap())
            }),
        );
        assert!(tr.converged());
        let s4 = tr.events.iter().position(|e| e.branch == Some(crate::timer::Branch::S4)).unwrap() as u64;
        assert!(!classify_segment(&tr, 0, s4 + 1).reset_free);
        let last = tr.len();
        let last_reset = tr
            .events
            .iter()
            .rposition(|e| matches!(e.branch, Some(b) if b.is_reset()))
            .unwrap() as u64
            + 1;
        let late = (last - 1).max(last_reset);
        let flags = classify_segment(&tr, late, last);
        assert!(flags.reset_free && flags.based);
    }
}
