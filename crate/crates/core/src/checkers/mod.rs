//! State predicates, trace predicates, and trace monitors.

mod monitors;

pub use monitors::{run_monitors, Metrics, MonitorRun};

use serde::{Deserialize, Serialize};

use crate::fault::{faulty_processes, perturbed_set, PerturbMode, PerturbReport};
use crate::scheduler::{Accounting, PolicyKind, SystemState, Trace};
use crate::timer::{RegisterValue, Tick, TimerParams};
use crate::topology::{ProcessId, Topology};

/// `b_pq`: trivially true for non-neighbors; otherwise the clocks of `p`
/// and `q` differ by less than two and `p`'s image of `q`'s clock is
/// neither ahead of `clock_q` nor two away from `clock_p`.
pub fn check_b(topo: &Topology, p: ProcessId, q: ProcessId, s: &SystemState) -> bool {
    let Some(slot) = topo.slot_of(p, q) else {
        return true;
    };
    let cp = s.procs[p].clock;
    let cq = s.procs[q].clock;
    let x = s.procs[p].images[slot].x;
    cp.abs_diff(cq) < 2 && x <= cq && cp.abs_diff(x) < 2
}

pub fn is_smooth(topo: &Topology, s: &SystemState) -> bool {
    (0..topo.n()).all(|p| topo.neighbors(p).iter().all(|&q| check_b(topo, p, q, s)))
}

/// Whether `p`'s clock, `w`, images, and written registers have their
/// timer-final values.
pub fn is_locally_timer_final(s: &SystemState, params: &TimerParams, p: ProcessId) -> bool {
    let base = RegisterValue::timer_final(params);
    s.procs[p].is_locally_final(params) && s.registers[p].iter().all(|r| *r == base)
}

pub fn is_timer_final(topo: &Topology, s: &SystemState, params: &TimerParams) -> bool {
    s.procs.len() == topo.n() && (0..topo.n()).all(|p| is_locally_timer_final(s, params, p))
}

/// d-accuracy of a process whose clock is `clock` at state `step`, from
/// completed local rounds and remote increments recorded in `acct`.
pub fn d_accurate_with(
    topo: &Topology,
    params: &TimerParams,
    acct: &Accounting,
    p: ProcessId,
    clock: Tick,
    step: u64,
    d: u32,
) -> bool {
    if clock > params.reset_band() {
        return true;
    }
    let need = |offset: u32| clock as i64 - offset as i64 - d as i64;
    (0..=params.diameter()).all(|m| acct.local_rounds_completed_by(p, m, step) as i64 >= need(m))
        && (0..topo.n()).all(|q| acct.increments_by(q, step) as i64 >= need(topo.dist(p, q)))
}

/// Whether `clock_p` is `d`-accurate at the state after `step` steps.
pub fn is_d_accurate(tr: &Trace, step: u64, p: ProcessId, d: u32) -> bool {
    let clock = tr.state_at(step).clock(p);
    d_accurate_with(&tr.topology, &tr.params, &tr.accounting, p, clock, step, d)
}

/// Slack allowed for unperturbed and perturbed processes.
pub fn accuracy_slack(k: usize, params: &TimerParams) -> (u32, u32) {
    let m = (k as u32).min(params.diameter());
    (2 * m, 5 * m)
}

/// Time accuracy at state `step` relative to the initial classification;
/// `None` when `k = 0`, where the notion does not apply.
pub fn is_time_accurate(tr: &Trace, step: u64, report: &PerturbReport, k: usize) -> Option<bool> {
    if k == 0 {
        return None;
    }
    let (du, dp) = accuracy_slack(k, &tr.params);
    let s = tr.state_at(step);
    Some((0..tr.topology.n()).all(|p| {
        let d = if report.is_perturbed(p) { dp } else { du };
        d_accurate_with(&tr.topology, &tr.params, &tr.accounting, p, s.clock(p), step, d)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    Stab,
    A1,
    A2,
    A8,
    D0,
    D2,
    D4,
    D5,
    D6,
    D7,
    E1,
    E3,
    Purity,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 13] = [
        MonitorKind::Stab,
        MonitorKind::A1,
        MonitorKind::A2,
        MonitorKind::A8,
        MonitorKind::D0,
        MonitorKind::D2,
        MonitorKind::D4,
        MonitorKind::D5,
        MonitorKind::D6,
        MonitorKind::D7,
        MonitorKind::E1,
        MonitorKind::E3,
        MonitorKind::Purity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MonitorKind::Stab => "stab",
            MonitorKind::A1 => "a1",
            MonitorKind::A2 => "a2",
            MonitorKind::A8 => "a8",
            MonitorKind::D0 => "d0",
            MonitorKind::D2 => "d2",
            MonitorKind::D4 => "d4",
            MonitorKind::D5 => "d5",
            MonitorKind::D6 => "d6",
            MonitorKind::D7 => "d7",
            MonitorKind::E1 => "e1",
            MonitorKind::E3 => "e3",
            MonitorKind::Purity => "purity",
        }
    }
}

impl std::fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MonitorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MonitorKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown monitor `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

/// First observed violation of a monitored property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// State index (steps taken) at which the violation is observed.
    pub step: u64,
    pub processes: Vec<ProcessId>,
    pub expected: String,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportContext {
    pub k_perturbed: usize,
    pub k_faulty: usize,
    pub diameter: u32,
    pub t_final: u32,
    pub policy: PolicyKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub monitor: MonitorKind,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    /// Premise instances checked, and instances skipped because their
    /// window extends past the end of the trace.
    pub checked: u64,
    pub inconclusive: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub context: ReportContext,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// Round budgets for the monitors whose bounds are asymptotic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MonitorBudgets {
    /// Rounds from the initial state to a timer-final state.
    pub stab_rounds: Option<u64>,
    /// Rounds from the first based smooth state to a timer-final state.
    pub a1_rounds: Option<u64>,
    /// Rounds from the initial state to lasting output legitimacy.
    pub output_rounds: Option<u64>,
}

/// What the monitors need to know about a trace beyond the trace itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunContext {
    /// Classification of the initial state, frozen for the whole run.
    pub initial: PerturbReport,
    /// Processes whose timer configuration was initially not timer-final.
    pub timer_faulty: Vec<ProcessId>,
    /// Processes whose core configuration was initially faulty.
    pub core_faulty: Vec<ProcessId>,
    pub budgets: MonitorBudgets,
    pub enabled: Vec<MonitorKind>,
    /// Extra rounds added to every monitored round window; 0 checks the
    /// bounds as stated.
    #[serde(default)]
    pub round_slack: u32,
}

impl RunContext {
    pub fn for_trace(tr: &Trace) -> Self {
        let initial = perturbed_set(&tr.topology, &tr.params, &tr.initial, PerturbMode::Heuristic)
            .expect("heuristic mode has no size limit");
        let core_faulty = tr
            .initial
            .core
            .as_ref()
            .map(|c| c.core_faulty(&tr.topology))
            .unwrap_or_default();
        RunContext {
            initial,
            timer_faulty: faulty_processes(&tr.initial, &tr.params),
            core_faulty,
            budgets: MonitorBudgets::default(),
            enabled: MonitorKind::ALL.to_vec(),
            round_slack: 0,
        }
    }

    pub fn with_budgets(mut self, budgets: MonitorBudgets) -> Self {
        self.budgets = budgets;
        self
    }

    pub fn with_monitors(mut self, enabled: Vec<MonitorKind>) -> Self {
        self.enabled = enabled;
        self
    }

    pub fn with_round_slack(mut self, slack: u32) -> Self {
        self.round_slack = slack;
        self
    }

    pub fn k_perturbed(&self) -> usize {
        self.initial.k_perturbed
    }

    /// Hamming count of the initial state's timer projection.
    pub fn k_faulty(&self) -> usize {
        self.timer_faulty.len()
    }
}
