//! Trace monitors.
//!
//! Streaming properties (closure, smoothness, b-pair invariance, time
//! accuracy, output stability, interface purity) are evaluated during one
//! replay of the trace. Window properties anchored at reset events are
//! evaluated afterwards from the per-process clock and `w` timelines.
//!
//! A window that extends past the end of the trace is inconclusive unless
//! the trace ended in a stable state, in which case every later state
//! equals the final one.

use serde::{Deserialize, Serialize};

use super::{
    accuracy_slack, check_b, is_locally_timer_final, CheckReport, MonitorKind, ReportContext, RunContext, Verdict,
    Violation,
};
use crate::scheduler::{Accounting, Change, Replay, SystemState, Trace};
use crate::timer::{Branch, Phase, Tick, TimerParams};
use crate::topology::{ProcessId, Topology};

/// Summary quantities of one trace.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u64,
    pub rounds: usize,
    pub converged: bool,
    pub state_changes: usize,
    /// Rounds until the first stable state (timer-final, and core
    /// legitimate when a core is attached).
    pub rounds_to_final: Option<usize>,
    /// Rounds from the first smooth state of the based suffix to the first
    /// stable state.
    pub rounds_smooth_to_final: Option<usize>,
    /// Rounds until the first state from which every state is time-accurate.
    pub rounds_to_time_accurate: Option<usize>,
    /// Rounds until outputs are legitimate for the rest of the trace.
    pub rounds_to_output_legit: Option<usize>,
    pub s4: usize,
    pub s5: usize,
    pub double_resets: usize,
    /// Largest per-process count of S4 executions.
    pub max_s4_per_process: usize,
    /// Largest per-process count of S4 executions plus core double resets.
    pub max_resets_per_process: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorRun {
    pub reports: Vec<CheckReport>,
    pub metrics: Metrics,
}

impl MonitorRun {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(CheckReport::passed)
    }

    pub fn report(&self, kind: MonitorKind) -> Option<&CheckReport> {
        self.reports.iter().find(|r| r.monitor == kind)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.reports.iter().filter(|r| !r.passed())
    }
}

/// Per-process piecewise-constant history of `(clock, w)`.
struct Timeline {
    /// `(first state index, clock, w)`, strictly increasing in index.
    pts: Vec<(u64, Tick, Tick)>,
}

impl Timeline {
    fn seg(&self, i: u64) -> usize {
        self.pts.partition_point(|e| e.0 <= i) - 1
    }

    /// First state index `>= from` satisfying `pred`.
    fn first_where(&self, from: u64, pred: impl Fn(Tick, Tick) -> bool) -> Option<u64> {
        let j = self.seg(from);
        self.pts[j..]
            .iter()
            .enumerate()
            .find(|(_, &(_, c, w))| pred(c, w))
            .map(|(off, &(i, _, _))| if off == 0 { from } else { i })
    }

    /// Last state index in `[from, len]` satisfying `pred`.
    fn last_where(&self, from: u64, len: u64, pred: impl Fn(Tick, Tick) -> bool) -> Option<u64> {
        let j0 = self.seg(from);
        for j in (j0..self.pts.len()).rev() {
            let (_, c, w) = self.pts[j];
            if pred(c, w) {
                return Some(match self.pts.get(j + 1) {
                    Some(&(next, _, _)) => next - 1,
                    None => len,
                });
            }
        }
        None
    }
}

/// End of the `r`-th round following some origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    At(u64),
    Past,
}

struct Windows {
    origin: u64,
    ends: Vec<u64>,
}

impl Windows {
    fn new(acct: &Accounting, origin: u64, max_rounds: usize) -> Self {
        Windows {
            origin,
            ends: acct.rounds_from(origin, max_rounds),
        }
    }

    fn end(&self, r: usize) -> End {
        match r {
            0 => End::At(self.origin),
            _ => self.ends.get(r - 1).map_or(End::Past, |&e| End::At(e)),
        }
    }
}

/// Rounds, counted from state `origin`, needed to reach state `target`.
fn rounds_between(acct: &Accounting, origin: u64, target: u64) -> usize {
    if target <= origin {
        return 0;
    }
    let mut at = origin;
    let mut r = 0;
    loop {
        r += 1;
        match acct.round_end_from(at, 0..acct.cycles.len()) {
            Some(end) if end < target => at = end,
            _ => return r,
        }
    }
}

struct Tally {
    checked: u64,
    inconclusive: u64,
    violation: Option<Violation>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checked: 0,
            inconclusive: 0,
            violation: None,
        }
    }

    fn fail(&mut self, v: Violation) {
        match &self.violation {
            Some(old) if old.step <= v.step => {}
            _ => self.violation = Some(v),
        }
    }

    fn verdict(&self) -> Verdict {
        if self.violation.is_some() {
            Verdict::Fail
        } else if self.checked == 0 {
            Verdict::NotApplicable
        } else {
            Verdict::Pass
        }
    }
}

fn violation(step: u64, processes: Vec<ProcessId>, expected: impl Into<String>, observed: impl Into<String>) -> Violation {
    Violation {
        step,
        processes,
        expected: expected.into(),
        observed: observed.into(),
    }
}

/// Everything gathered during the replay pass.
struct Replayed {
    timelines: Vec<Timeline>,
    first_stable: Option<u64>,
    stab: Tally,
    a1: Tally,
    a1_first_smooth: Option<u64>,
    a2: Tally,
    zero_present: Vec<bool>,
    low: Vec<bool>,
    d6: Tally,
    d6_last_bad: Option<u64>,
    e3: Tally,
    e3_last_nonlegit: Option<u64>,
    purity: Tally,
    state_changes: usize,
}

struct Smoothness {
    /// `bad[p][slot]`: `b_pq` fails.
    bad: Vec<Vec<bool>>,
    count: usize,
}

impl Smoothness {
    fn new(topo: &Topology, s: &SystemState) -> Self {
        let bad: Vec<Vec<bool>> = (0..topo.n())
            .map(|p| topo.neighbors(p).iter().map(|&q| !check_b(topo, p, q, s)).collect())
            .collect();
        let count = bad.iter().flatten().filter(|&&b| b).count();
        Smoothness { bad, count }
    }

    fn set(&mut self, p: ProcessId, slot: usize, bad: bool) {
        let cell = &mut self.bad[p][slot];
        if *cell != bad {
            if bad {
                self.count += 1;
            } else {
                self.count -= 1;
            }
            *cell = bad;
        }
    }

    fn refresh(&mut self, topo: &Topology, s: &SystemState, p: ProcessId) {
        for (slot, &q) in topo.neighbors(p).iter().enumerate() {
            self.set(p, slot, !check_b(topo, p, q, s));
            let back = topo.reverse_slot(p, slot);
            self.set(q, back, !check_b(topo, q, p, s));
        }
    }

    fn good(&self, topo: &Topology, p: ProcessId, slot: usize) -> bool {
        let q = topo.neighbors(p)[slot];
        !self.bad[p][slot] && !self.bad[q][topo.reverse_slot(p, slot)]
    }
}

fn is_reset_event(ev: &crate::scheduler::Event) -> bool {
    ev.double_reset || matches!(ev.branch, Some(b) if b.is_reset())
}

fn stable_state(topo: &Topology, s: &SystemState, nonfinal: usize) -> bool {
    nonfinal == 0 && s.core.as_ref().is_none_or(|c| c.core_legitimate(topo))
}

struct Accuracy<'a> {
    topo: &'a Topology,
    params: &'a TimerParams,
    slack: Vec<u32>,
    local: Vec<Vec<usize>>,
    inc: Vec<usize>,
    violating: Vec<bool>,
    count: usize,
}

impl<'a> Accuracy<'a> {
    fn check(&self, p: ProcessId, clock: Tick) -> bool {
        if clock > self.params.reset_band() {
            return true;
        }
        let d = self.slack[p] as i64;
        let need = |off: u32| clock as i64 - off as i64 - d;
        self.local[p].iter().enumerate().all(|(m, &c)| c as i64 >= need(m as u32))
            && (0..self.topo.n()).all(|q| self.inc[q] as i64 >= need(self.topo.dist(p, q)))
    }

    fn refresh(&mut self, p: ProcessId, clock: Tick) {
        let bad = !self.check(p, clock);
        if bad != self.violating[p] {
            self.violating[p] = bad;
            if bad {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    fn first_violating(&self) -> Vec<ProcessId> {
        (0..self.violating.len()).filter(|&p| self.violating[p]).collect()
    }
}

fn replay_pass(tr: &Trace, ctx: &RunContext, composite: bool) -> Replayed {
    let topo = &tr.topology;
    let params = &tr.params;
    let acct = &tr.accounting;
    let n = topo.n();
    let len = tr.len();
    let d = params.diameter();
    let based_from = acct.boundary(3);

    let mut replay = Replay::new(topo, tr.initial.clone());
    let s0 = replay.state();

    let mut timelines: Vec<Timeline> = (0..n)
        .map(|p| Timeline {
            pts: vec![(0, s0.clock(p), s0.w(p))],
        })
        .collect();

    // stability
    let mut final_flags: Vec<bool> = (0..n).map(|p| is_locally_timer_final(s0, params, p)).collect();
    let mut nonfinal = final_flags.iter().filter(|&&f| !f).count();
    let mut first_stable = stable_state(topo, s0, nonfinal).then_some(0);
    let mut stab = Tally::new();

    // smoothness and b-pairs
    let mut smooth = Smoothness::new(topo, s0);
    let mut a1 = Tally::new();
    let mut a1_first_smooth = None;
    let mut a2 = Tally::new();
    let mut seg_start: Option<u64> = None;
    let mut reading = vec![false; n];
    let mut swept = vec![false; n];
    let mut swept_count = 0;
    let mut rising = false;
    let mut established: Vec<Vec<bool>> = (0..n).map(|p| vec![false; topo.degree(p)]).collect();

    // low-value states
    let low_cap = 3 * d;
    let mut zero_count = (0..n).filter(|&p| s0.clock(p) == 0 && s0.w(p) == 0).count();
    let mut high_count = (0..n).filter(|&p| s0.clock(p) > low_cap || s0.w(p) > low_cap).count();
    let mut zero_present = Vec::with_capacity(len as usize + 1);
    let mut low = Vec::with_capacity(len as usize + 1);
    zero_present.push(zero_count > 0);
    low.push(high_count == 0);

    // time accuracy
    let k = ctx.k_perturbed();
    let (du, dp) = accuracy_slack(k, params);
    let mut acc = Accuracy {
        topo,
        params,
        slack: (0..n).map(|p| if ctx.initial.is_perturbed(p) { dp } else { du }).collect(),
        local: vec![vec![0; d as usize + 1]; n],
        inc: vec![0; n],
        violating: vec![false; n],
        count: 0,
    };
    let mut completions: Vec<(u64, ProcessId, usize)> = acct
        .local_rounds
        .iter()
        .enumerate()
        .flat_map(|(p, per_d)| {
            per_d
                .iter()
                .enumerate()
                .flat_map(move |(m, ends)| ends.iter().map(move |&e| (e, p, m)))
        })
        .collect();
    completions.sort_unstable();
    let mut next_completion = 0;
    let slack = ctx.round_slack as usize;
    let d6_origin = acct.boundary((k as u32).min(d) as usize + slack);
    let mut d6 = Tally::new();
    let mut d6_last_bad = None;
    for p in 0..n {
        acc.refresh(p, s0.clock(p));
    }
    if acc.count > 0 {
        d6_last_bad = Some(0);
        if d6_origin == Some(0) {
            d6.fail(violation(0, acc.first_violating(), "time-accurate", "inaccurate clock"));
        }
    }

    // outputs
    let mut e3 = Tally::new();
    let mut purity = Tally::new();
    let faulty_core = {
        let mut f = vec![false; n];
        ctx.core_faulty.iter().for_each(|&p| f[p] = true);
        f
    };
    let legit_of = |s: &SystemState, p: ProcessId| s.core.as_ref().map(|c| c.procs[p].output == c.legit[p]);
    let mut nonlegit = (0..n).filter(|&p| legit_of(s0, p) == Some(false)).count();
    let mut e3_last_nonlegit = (nonlegit > 0).then_some(0);

    let mut state_changes = 0;

    for ev in &tr.events {
        let p = ev.pid;
        let j = ev.step;
        let pre_clock = replay.state().clock(p);
        replay.apply(ev);
        let s = replay.state();
        if ev.changes_state() {
            state_changes += 1;
        }

        let clock_changed = ev.changes.iter().any(|c| matches!(c, Change::Clock { .. }));
        let timer_changed = ev.changes.iter().any(Change::touches_timer);
        if timer_changed {
            timelines[p].pts.push((j, s.clock(p), s.w(p)));
        }

        // stability and closure
        if ev.changes_state() {
            if let Some(at) = first_stable {
                stab.fail(violation(
                    j,
                    vec![p],
                    format!("no state change after the stable state at {at}"),
                    format!("{:?} changed {} field(s)", ev.stmt, ev.changes.len()),
                ));
            }
            let f = is_locally_timer_final(s, params, p);
            if f != final_flags[p] {
                final_flags[p] = f;
                if f {
                    nonfinal -= 1;
                } else {
                    nonfinal += 1;
                }
            }
            if first_stable.is_none() && stable_state(topo, s, nonfinal) {
                first_stable = Some(j);
            }
        }

        // smoothness
        let geometry_changed = clock_changed || ev.changes.iter().any(|c| matches!(c, Change::Image { .. }));
        if geometry_changed {
            smooth.refresh(topo, s, p);
        }
        if let Some(b3) = based_from {
            if j >= b3 {
                let is_smooth = smooth.count == 0;
                match a1_first_smooth {
                    None if is_smooth => a1_first_smooth = Some(j),
                    Some(_) if !is_smooth => a1.fail(violation(
                        j,
                        vec![p],
                        "smoothness persists in the based suffix",
                        format!("{} b-pair(s) fail after {:?}", smooth.count, ev.stmt),
                    )),
                    _ => {}
                }
            }
        }

        // rising segments
        if let Some(b3) = based_from {
            if j >= b3 {
                if is_reset_event(ev) || seg_start.is_none() {
                    seg_start = Some(j);
                    reading.iter_mut().for_each(|r| *r = false);
                    swept.iter_mut().for_each(|r| *r = false);
                    swept_count = 0;
                    rising = false;
                } else if !rising {
                    if let Phase::Read(i) = ev.stmt {
                        if i == 0 {
                            reading[p] = true;
                        }
                        if i + 1 == topo.degree(p) && reading[p] && !swept[p] {
                            swept[p] = true;
                            swept_count += 1;
                        }
                    }
                    if swept_count == n {
                        rising = true;
                        a2.checked += 1;
                        for (q, est) in established.iter_mut().enumerate() {
                            for (slot, e) in est.iter_mut().enumerate() {
                                *e = smooth.good(topo, q, slot);
                            }
                        }
                    }
                } else if geometry_changed {
                    let affected = std::iter::once(p).chain(topo.neighbors(p).iter().copied());
                    for q in affected {
                        for slot in 0..topo.degree(q) {
                            let good = smooth.good(topo, q, slot);
                            if established[q][slot] && !good {
                                let r = topo.neighbors(q)[slot];
                                a2.fail(violation(
                                    j,
                                    vec![q, r],
                                    "b_pq and b_qp stay true in a rising segment",
                                    format!(
                                        "clocks {} and {}, images x_{q}[{r}]={} x_{r}[{q}]={}",
                                        s.clock(q),
                                        s.clock(r),
                                        s.procs[q].images[slot].x,
                                        s.procs[r].images[topo.reverse_slot(q, slot)].x
                                    ),
                                ));
                            }
                            established[q][slot] |= good;
                        }
                    }
                }
            }
        }

        // low-value states
        if timer_changed {
            let (c0, w0, c1, w1) = {
                let pts = &timelines[p].pts;
                let (_, c1, w1) = pts[pts.len() - 1];
                let (_, c0, w0) = pts[pts.len() - 2];
                (c0, w0, c1, w1)
            };
            zero_count = zero_count + (c1 == 0 && w1 == 0) as usize - (c0 == 0 && w0 == 0) as usize;
            high_count = high_count + (c1 > low_cap || w1 > low_cap) as usize - (c0 > low_cap || w0 > low_cap) as usize;
        }
        zero_present.push(zero_count > 0);
        low.push(high_count == 0);

        // time accuracy
        let mut counters_rose = false;
        while next_completion < completions.len() && completions[next_completion].0 == j {
            let (_, q, m) = completions[next_completion];
            acc.local[q][m] += 1;
            counters_rose = true;
            next_completion += 1;
        }
        if matches!(ev.branch, Some(b) if b.is_increment()) {
            acc.inc[p] += 1;
            counters_rose = true;
        }
        if counters_rose {
            for q in 0..n {
                if acc.violating[q] {
                    acc.refresh(q, s.clock(q));
                }
            }
        }
        if clock_changed {
            acc.refresh(p, s.clock(p));
        }
        if acc.count > 0 {
            d6_last_bad = Some(j);
            if d6_origin.is_some_and(|o| j >= o) {
                d6.fail(violation(
                    j,
                    acc.first_violating(),
                    "every state after the accuracy deadline is time-accurate",
                    format!(
                        "clock(s) {:?} not accurate",
                        acc.first_violating().iter().map(|&q| s.clock(q)).collect::<Vec<_>>()
                    ),
                ));
            }
        }

        // outputs and interface purity
        if composite {
            for c in &ev.changes {
                if let Change::Output { from, to } = *c {
                    let legit = s.core.as_ref().expect("composite").legit[p];
                    if !faulty_core[p] && to != legit {
                        e3.fail(violation(
                            j,
                            vec![p],
                            format!("nonfaulty output stays {legit}"),
                            format!("output {from} -> {to}"),
                        ));
                    }
                    nonlegit = nonlegit + (to != legit) as usize - (from != legit) as usize;
                }
            }
            if nonlegit > 0 {
                e3_last_nonlegit = Some(j);
            }
            purity.checked += 1;
            let timer_changes: Vec<&Change> = ev.changes.iter().filter(|c| c.touches_timer()).collect();
            let ok = match ev.stmt {
                Phase::Detect if ev.double_reset => {
                    pre_clock > params.reset_band() && s.clock(p) == 0 && s.w(p) == 0
                }
                Phase::Detect | Phase::Read(_) | Phase::CoreStep | Phase::Write(_) => timer_changes.is_empty(),
                Phase::ComputeW | Phase::Dispatch => true,
            };
            if !ok {
                purity.fail(violation(
                    j,
                    vec![p],
                    "core steps leave clock and w alone except for a guarded double reset",
                    format!("{:?} changed {:?}", ev.stmt, timer_changes),
                ));
            }
        }
    }

    if first_stable.is_some() || tr.converged() {
        stab.checked += 1;
    }
    if a1_first_smooth.is_some() {
        a1.checked += 1;
    }
    if composite {
        e3.checked += 1;
    }
    if d6_origin.is_some() {
        d6.checked += 1;
    }

    Replayed {
        timelines,
        first_stable,
        stab,
        a1,
        a1_first_smooth,
        a2,
        zero_present,
        low,
        d6,
        d6_last_bad,
        e3,
        e3_last_nonlegit,
        purity,
        state_changes,
    }
}

fn report(tr: &Trace, ctx: &RunContext, monitor: MonitorKind, tally: Tally, note: Option<String>) -> CheckReport {
    CheckReport {
        monitor,
        verdict: tally.verdict(),
        violation: tally.violation,
        checked: tally.checked,
        inconclusive: tally.inconclusive,
        note,
        context: ReportContext {
            k_perturbed: ctx.k_perturbed(),
            k_faulty: ctx.k_faulty(),
            diameter: tr.params.diameter(),
            t_final: tr.params.t_final(),
            policy: tr.policy.kind,
            seed: tr.policy.seed,
        },
    }
}

fn not_applicable(tr: &Trace, ctx: &RunContext, monitor: MonitorKind, why: &str) -> CheckReport {
    report(tr, ctx, monitor, Tally::new(), Some(why.to_string()))
}

struct Windowed<'a> {
    tr: &'a Trace,
    timelines: &'a [Timeline],
    /// Later states all equal the final one.
    absorbing: bool,
}

impl Windowed<'_> {
    /// Whether some state in `[from, end]` of process `q` satisfies `pred`;
    /// `None` when undecidable from the trace.
    fn exists(&self, q: ProcessId, from: u64, end: End, pred: impl Fn(Tick, Tick) -> bool) -> Option<bool> {
        let first = self.timelines[q].first_where(from, pred);
        match end {
            End::At(e) => Some(first.is_some_and(|f| f <= e)),
            End::Past if first.is_some() => Some(true),
            End::Past if self.absorbing => Some(false),
            End::Past => None,
        }
    }

    /// Whether from some state in `[from, end]` on, `pred` holds for `q`
    /// at every later state.
    fn holds_from(&self, q: ProcessId, from: u64, end: End, pred: impl Fn(Tick, Tick) -> bool) -> Option<bool> {
        let len = self.tr.len();
        let last_bad = self.timelines[q].last_where(from, len, |c, w| !pred(c, w));
        let settled = match last_bad {
            None => true,
            Some(b) if b < len => true,
            Some(_) => false,
        };
        match end {
            End::At(e) => Some(last_bad.is_none_or(|b| b < e)),
            End::Past if settled && self.absorbing => Some(true),
            End::Past if !settled && self.absorbing => Some(false),
            End::Past => None,
        }
    }
}

pub fn run_monitors(tr: &Trace, ctx: &RunContext) -> MonitorRun {
    let topo = &tr.topology;
    let params = &tr.params;
    let acct = &tr.accounting;
    let n = topo.n();
    let d = params.diameter();
    let t = params.t_final();
    let composite = tr.initial.core.is_some();
    let len = tr.len();

    let rep = replay_pass(tr, ctx, composite);
    let absorbing = tr.converged() && rep.first_stable.is_some();
    let win = Windowed {
        tr,
        timelines: &rep.timelines,
        absorbing,
    };
    let rounds_to = |target: u64| rounds_between(acct, 0, target);

    let s4_events: Vec<(ProcessId, u64)> = tr
        .events
        .iter()
        .filter(|e| e.branch == Some(Branch::S4))
        .map(|e| (e.pid, e.step))
        .collect();

    let mut metrics = Metrics {
        steps: len,
        rounds: acct.round_boundaries.len(),
        converged: tr.converged(),
        state_changes: rep.state_changes,
        rounds_to_final: rep.first_stable.map(rounds_to),
        rounds_smooth_to_final: rep
            .a1_first_smooth
            .zip(rep.first_stable)
            .filter(|(sm, f)| f >= sm)
            .map(|(sm, f)| rounds_between(acct, sm, f)),
        rounds_to_time_accurate: None,
        rounds_to_output_legit: None,
        s4: acct.s4.iter().map(Vec::len).sum(),
        s5: acct.s5.iter().map(Vec::len).sum(),
        double_resets: acct.double_resets.iter().map(Vec::len).sum(),
        max_s4_per_process: acct.s4.iter().map(Vec::len).max().unwrap_or(0),
        max_resets_per_process: (0..n)
            .map(|p| acct.s4[p].len() + acct.double_resets[p].len())
            .max()
            .unwrap_or(0),
    };

    let mut reports = Vec::new();
    let enabled = |m: MonitorKind| ctx.enabled.contains(&m);
    let isolated_only = "core layer attached";

    // stab
    if enabled(MonitorKind::Stab) {
        let mut tally = rep.stab;
        let mut note = None;
        match rep.first_stable {
            Some(at) => {
                let r = rounds_to(at);
                note = Some(format!("stable after {r} round(s)"));
                if let Some(budget) = ctx.budgets.stab_rounds {
                    if r as u64 > budget {
                        tally.fail(violation(at, vec![], format!("stable within {budget} rounds"), format!("{r} rounds")));
                    }
                }
            }
            None => {
                tally.checked += 1;
                let elapsed = acct.round_boundaries.len();
                match ctx.budgets.stab_rounds {
                    Some(budget) if elapsed as u64 >= budget => tally.fail(violation(
                        acct.boundary(budget as usize).unwrap_or(len),
                        vec![],
                        format!("stable within {budget} rounds"),
                        format!("not stable after {elapsed} rounds"),
                    )),
                    Some(_) => {
                        tally.checked -= 1;
                        tally.inconclusive += 1;
                    }
                    None => tally.fail(violation(len, vec![], "a stable state", format!("none in {elapsed} rounds"))),
                }
            }
        }
        reports.push(report(tr, ctx, MonitorKind::Stab, tally, note));
    }

    // a1
    if enabled(MonitorKind::A1) {
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::A1, isolated_only));
        } else {
            let mut tally = rep.a1;
            let mut note = None;
            if let (Some(origin), Some(budget)) = (rep.a1_first_smooth, ctx.budgets.a1_rounds) {
                let final_at = rep.first_stable.filter(|&f| f >= origin);
                match final_at {
                    Some(f) => {
                        let r = rounds_between(acct, origin, f);
                        note = Some(format!("timer-final {r} round(s) after the first based smooth state"));
                        if r as u64 > budget {
                            tally.fail(violation(f, vec![], format!("timer-final within {budget} rounds of smoothness"), format!("{r} rounds")));
                        }
                    }
                    None => {
                        let ends = acct.rounds_from(origin, budget as usize);
                        if ends.len() as u64 >= budget {
                            tally.fail(violation(
                                *ends.last().expect("budget is positive"),
                                vec![],
                                format!("timer-final within {budget} rounds of smoothness"),
                                "not reached",
                            ));
                        } else {
                            tally.inconclusive += 1;
                        }
                    }
                }
            }
            reports.push(report(tr, ctx, MonitorKind::A1, tally, note));
        }
    }

    // a2
    if enabled(MonitorKind::A2) {
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::A2, isolated_only));
        } else {
            reports.push(report(tr, ctx, MonitorKind::A2, rep.a2, None));
        }
    }

    // a8
    if enabled(MonitorKind::A8) {
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::A8, isolated_only));
        } else {
            let mut tally = Tally::new();
            if let Some(b3) = acct.boundary(3) {
                let mut next_low = vec![None; len as usize + 2];
                for i in (0..=len as usize).rev() {
                    next_low[i] = if rep.low[i] { Some(i as u64) } else { next_low[i + 1] };
                }
                for sigma in b3..=len {
                    if !rep.zero_present[sigma as usize] {
                        continue;
                    }
                    let reach = (d + ctx.round_slack) as usize;
                    let end = Windows::new(acct, sigma, reach).end(reach);
                    let found = next_low[sigma as usize];
                    let ok = match (end, found) {
                        (End::At(e), f) => Some(f.is_some_and(|f| f <= e)),
                        (End::Past, Some(_)) => Some(true),
                        (End::Past, None) if absorbing => Some(false),
                        (End::Past, None) => None,
                    };
                    match ok {
                        Some(true) => tally.checked += 1,
                        Some(false) => {
                            tally.checked += 1;
                            tally.fail(violation(
                                sigma,
                                vec![],
                                format!("all clock, w <= {} within {d} rounds", 3 * d),
                                "no such state",
                            ));
                            break;
                        }
                        None => tally.inconclusive += 1,
                    }
                }
            }
            reports.push(report(tr, ctx, MonitorKind::A8, tally, None));
        }
    }

    // d0
    if enabled(MonitorKind::D0) {
        let mut tally = Tally::new();
        tally.checked = n as u64;
        for (p, steps) in acct.s4.iter().enumerate() {
            if steps.len() > 1 {
                tally.fail(violation(steps[1], vec![p], "at most one S4 per process", format!("S4 at steps {steps:?}")));
            }
        }
        reports.push(report(tr, ctx, MonitorKind::D0, tally, None));
    }

    let k = ctx.k_perturbed();
    let m = (k as u32).min(d);
    let slack = ctx.round_slack;

    // d2
    if enabled(MonitorKind::D2) {
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::D2, isolated_only));
        } else if k == 0 {
            reports.push(not_applicable(tr, ctx, MonitorKind::D2, "initial state is 0-perturbed"));
        } else {
            let mut tally = Tally::new();
            let unperturbed = ctx.initial.unperturbed_mask(n);
            for &(p, sigma) in &s4_events {
                let w = Windows::new(acct, sigma, (m + slack) as usize);
                for q in 0..n {
                    let dist = topo.dist(p, q);
                    if dist == 0 || dist > m {
                        continue;
                    }
                    let end = w.end((dist + slack) as usize);
                    let bound = 3 * dist;
                    let mut check = |bound: Tick, what: &str| match win.exists(q, sigma, end, |c, w| c <= bound && w <= bound) {
                        Some(true) => tally.checked += 1,
                        Some(false) => {
                            tally.checked += 1;
                            tally.fail(violation(
                                sigma,
                                vec![p, q],
                                format!("{what}: clock and w <= {bound} within {dist} round(s)"),
                                "no such state",
                            ));
                        }
                        None => tally.inconclusive += 1,
                    };
                    check(bound, "distance bound");
                    let unperturbed_path = unperturbed[p]
                        && unperturbed[q]
                        && topo.restricted_dist(p, q, &unperturbed) == Some(dist);
                    if unperturbed_path {
                        check(dist, "unperturbed path");
                    }
                }
            }
            reports.push(report(tr, ctx, MonitorKind::D2, tally, None));
        }
    }

    // d4 and d5
    for kind in [MonitorKind::D4, MonitorKind::D5] {
        if !enabled(kind) {
            continue;
        }
        if composite {
            reports.push(not_applicable(tr, ctx, kind, isolated_only));
            continue;
        }
        let mut tally = Tally::new();
        let cap = params.w_cap();
        for &(p, sigma) in &s4_events {
            let horizon = (2 * t + d + 4 + slack) as usize;
            let w = Windows::new(acct, sigma, horizon);
            'procs: for q in 0..n {
                let dist = topo.dist(p, q);
                let top = if kind == MonitorKind::D4 { cap } else { t };
                for v in 1..=top {
                    let (rounds, res) = if kind == MonitorKind::D4 {
                        let r = 2 * v + dist + slack;
                        (r, win.holds_from(q, sigma, w.end(r as usize), |_, wq| wq >= v))
                    } else {
                        let r = 2 * v + dist + 4 + slack;
                        (r, win.exists(q, sigma, w.end(r as usize), |c, _| c >= v))
                    };
                    match res {
                        Some(true) => tally.checked += 1,
                        Some(false) => {
                            tally.checked += 1;
                            let what = if kind == MonitorKind::D4 { "w" } else { "clock" };
                            let lasting = if kind == MonitorKind::D4 { " for good" } else { "" };
                            tally.fail(violation(
                                sigma,
                                vec![p, q],
                                format!("{what} >= {v}{lasting} within {rounds} round(s) of the reset"),
                                "bound not met",
                            ));
                            continue 'procs;
                        }
                        None => tally.inconclusive += 1,
                    }
                }
            }
        }
        reports.push(report(tr, ctx, kind, tally, None));
    }

    // d6
    if enabled(MonitorKind::D6) {
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::D6, isolated_only));
        } else if k == 0 || k >= n {
            reports.push(not_applicable(tr, ctx, MonitorKind::D6, "needs 0 < k < n"));
        } else {
            let mut tally = rep.d6;
            let settled = rep.d6_last_bad.map_or(0, |b| b + 1);
            if settled <= len || absorbing {
                metrics.rounds_to_time_accurate = Some(rounds_to(settled));
            }
            let mut note = metrics
                .rounds_to_time_accurate
                .map(|r| format!("time-accurate from round {r}"));
            if acct.boundary((m + slack) as usize).is_none() {
                // the deadline lies past the trace
                tally.checked = 0;
                if absorbing {
                    tally.checked = 1;
                } else {
                    tally.inconclusive = 1;
                    note = Some(format!("trace ends before round {m}"));
                }
            }
            reports.push(report(tr, ctx, MonitorKind::D6, tally, note));
        }
    }

    // d7
    if enabled(MonitorKind::D7) {
        let kf = ctx.k_faulty();
        if composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::D7, isolated_only));
        } else if kf == 0 || kf >= n {
            reports.push(not_applicable(tr, ctx, MonitorKind::D7, "needs 0 < k < n"));
        } else {
            let mf = (kf as u32).min(d);
            let mut tally = Tally::new();
            let from_start = Windows::new(acct, 0, (2 * t + mf + 4 + slack) as usize);
            for &p in &ctx.initial.perturbed {
                let deadline = from_start.end((mf + slack) as usize);
                let low_at = rep.timelines[p].first_where(0, |c, _| c <= 3 * mf);
                let low_ok = match deadline {
                    End::At(e) => low_at.filter(|&s| s <= e),
                    End::Past => low_at,
                };
                let Some(sigma0) = low_ok else {
                    if deadline == End::Past && !absorbing {
                        tally.inconclusive += 1;
                    } else {
                        tally.checked += 1;
                        tally.fail(violation(
                            0,
                            vec![p],
                            format!("perturbed clock <= {} within {mf} round(s)", 3 * mf),
                            "no such state",
                        ));
                    }
                    continue;
                };
                tally.checked += 1;
                for v in 1..=t {
                    let r = 2 * v + 4 + mf + slack;
                    match win.exists(p, sigma0, from_start.end(r as usize), |c, _| c >= v) {
                        Some(true) => tally.checked += 1,
                        Some(false) => {
                            tally.checked += 1;
                            tally.fail(violation(
                                sigma0,
                                vec![p],
                                format!("perturbed clock reaches {v} within {r} rounds"),
                                "bound not met",
                            ));
                            break;
                        }
                        None => tally.inconclusive += 1,
                    }
                }
            }
            for &(p, sigma) in &s4_events {
                if ctx.initial.is_perturbed(p) {
                    continue;
                }
                let w = Windows::new(acct, sigma, (2 * t + 4 + slack) as usize);
                for v in 1..=t {
                    let r = 2 * v + 4 + slack;
                    match win.exists(p, sigma, w.end(r as usize), |c, _| c >= v) {
                        Some(true) => tally.checked += 1,
                        Some(false) => {
                            tally.checked += 1;
                            tally.fail(violation(
                                sigma,
                                vec![p],
                                format!("clock reaches {v} within {r} rounds of its reset"),
                                "bound not met",
                            ));
                            break;
                        }
                        None => tally.inconclusive += 1,
                    }
                }
            }
            reports.push(report(tr, ctx, MonitorKind::D7, tally, None));
        }
    }

    // e1
    if enabled(MonitorKind::E1) {
        if !composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::E1, "no core layer"));
        } else {
            let mut tally = Tally::new();
            tally.checked = n as u64;
            for p in 0..n {
                let mut resets: Vec<u64> = acct.s4[p].iter().chain(&acct.double_resets[p]).copied().collect();
                resets.sort_unstable();
                if resets.len() > 1 {
                    tally.fail(violation(
                        resets[1],
                        vec![p],
                        "at most one double reset per process",
                        format!("double resets at steps {resets:?}"),
                    ));
                }
            }
            reports.push(report(tr, ctx, MonitorKind::E1, tally, None));
        }
    }

    // e3
    if enabled(MonitorKind::E3) {
        if !composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::E3, "no core layer"));
        } else {
            let mut tally = rep.e3;
            let settled = rep.e3_last_nonlegit.map_or(0, |b| b + 1);
            let stable_end = settled <= len;
            let final_legit = tr.final_state.core.as_ref().is_some_and(|c| c.output_legitimate());
            if final_legit && stable_end {
                metrics.rounds_to_output_legit = Some(rounds_to(settled));
            }
            if let Some(budget) = ctx.budgets.output_rounds {
                match metrics.rounds_to_output_legit {
                    Some(r) if r as u64 > budget => tally.fail(violation(
                        settled,
                        vec![],
                        format!("outputs legitimate within {budget} rounds"),
                        format!("{r} rounds"),
                    )),
                    Some(_) => {}
                    None => match acct.boundary(budget as usize) {
                        Some(e) => tally.fail(violation(e, vec![], format!("outputs legitimate within {budget} rounds"), "not legitimate")),
                        None => tally.inconclusive += 1,
                    },
                }
            }
            let note = metrics
                .rounds_to_output_legit
                .map(|r| format!("outputs legitimate from round {r}"));
            reports.push(report(tr, ctx, MonitorKind::E3, tally, note));
        }
    }

    // purity
    if enabled(MonitorKind::Purity) {
        if !composite {
            reports.push(not_applicable(tr, ctx, MonitorKind::Purity, "no core layer"));
        } else {
            reports.push(report(tr, ctx, MonitorKind::Purity, rep.purity, None));
        }
    }

    MonitorRun { reports, metrics }
}
