//! Embedding the repair timer in a larger system.
//!
//! The core system talks to the timer through two operations only: it may
//! read the clock, and it may perform a double reset (`clock, w <- 0, 0`)
//! when it detects a fault while the clock is above `T - D`. Output copying
//! is gated on the clock value ([`gate_design1`], [`gate_design2`]).
//!
//! [`ToyCoreState`] is a small concrete core: every process holds an output
//! value and a stored copy of each neighbor's output. The repair value of a
//! process is the strict majority of its own output and its neighbors'
//! copies of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timer::{Tick, TimerParams};
use crate::topology::{ProcessId, Topology};

/// Output values of the toy core.
pub type Value = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GateError {
    #[error("h must be at least 1")]
    ZeroH,
    #[error("r must be at least 1")]
    ZeroR,
    #[error("(h+5)*D = {band} must be below T = {t} to leave a copy-free band")]
    NoCopyFreeBand { band: Tick, t: Tick },
    #[error("(h+5)*r = {threshold} exceeds T = {t}")]
    ThresholdAboveFinal { threshold: Tick, t: Tick },
    #[error("core stabilization budget {budget} rounds exceeds T - 7D = {limit}")]
    CoreTooSlow { budget: u64, limit: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    /// Copy from the `i`-th repair procedure for the largest `i` with
    /// `(h+5)*i <= clock`, or from the core output at `clock = T`.
    #[serde(rename = "1")]
    One,
    /// Copy from the single repair procedure once `clock >= (h+5)*r`.
    #[serde(rename = "2")]
    Two,
}

impl std::str::FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Design::One),
            "2" => Ok(Design::Two),
            other => Err(format!("unknown design `{other}` (expected 1 or 2)")),
        }
    }
}

/// Output-copy gating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateConfig {
    /// Rounds per fault needed by a repair procedure.
    pub h: u32,
    /// Fault budget of the single repair procedure.
    pub r: u32,
    pub design: Design,
}

impl GateConfig {
    pub fn new(design: Design, h: u32, r: u32) -> Self {
        GateConfig { h, r, design }
    }

    /// Checks the gating preconditions against the timer parameters and
    /// the core's stabilization budget in rounds (must fit within `T - 7D`).
    pub fn validate(&self, params: &TimerParams, core_budget: u64) -> Result<(), GateError> {
        if self.h == 0 {
            return Err(GateError::ZeroH);
        }
        if self.r == 0 {
            return Err(GateError::ZeroR);
        }
        let t = params.t_final();
        match self.design {
            Design::One => {
                let band = (self.h + 5) * params.diameter();
                if band >= t {
                    return Err(GateError::NoCopyFreeBand { band, t });
                }
            }
            Design::Two => {
                let threshold = self.threshold();
                if threshold > t {
                    return Err(GateError::ThresholdAboveFinal { threshold, t });
                }
            }
        }
        let limit = t as i64 - 7 * params.diameter() as i64;
        if core_budget as i64 > limit {
            return Err(GateError::CoreTooSlow {
                budget: core_budget,
                limit,
            });
        }
        Ok(())
    }

    /// `(h+5) * r`, the Design 2 copy threshold.
    pub fn threshold(&self) -> Tick {
        (self.h + 5) * self.r
    }

    /// Whether a process at `clock` copies a repair value to its output.
    pub fn copies_at(&self, clock: Tick, params: &TimerParams) -> bool {
        match self.design {
            Design::One => gate_design1(clock, self, params) != Selection::None,
            Design::Two => gate_design2(clock, self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetAction {
    Reset,
    None,
}

/// The interface rule for the core: reset the timer iff a fault was
/// detected after the register reads and `clock > T - D`.
pub fn maybe_double_reset(fault_detected: bool, clock: Tick, params: &TimerParams) -> ResetAction {
    if fault_detected && clock > params.reset_band() {
        ResetAction::Reset
    } else {
        ResetAction::None
    }
}

/// Which output set Design 1 copies at a given clock value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    CoreOutput,
    Repair(u32),
    None,
}

pub fn gate_design1(clock: Tick, cfg: &GateConfig, params: &TimerParams) -> Selection {
    let step = cfg.h + 5;
    let d = params.diameter();
    if clock == params.t_final() {
        Selection::CoreOutput
    } else if clock > step * d {
        // (h+5)*D < clock < T
        Selection::None
    } else {
        match (clock / step).min(d) {
            0 => Selection::None,
            i => Selection::Repair(i),
        }
    }
}

pub fn gate_design2(clock: Tick, cfg: &GateConfig) -> bool {
    clock >= cfg.threshold()
}

/// Core-system fields of one link register: the writer's output and the
/// writer's stored copy of the reader's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoreRegister {
    pub output: Value,
    pub copy: Value,
}

/// Per-process core state of the toy majority system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToyCoreState {
    pub output: Value,
    /// Stored copy of each neighbor's output, by neighbor slot.
    pub copies: Vec<Value>,
    /// Repair value under reconstruction.
    pub shadow: Value,
    /// Last read neighbor output, by slot.
    pub adv_out: Vec<Value>,
    /// Last read neighbor copy of our output, by slot.
    pub adv_copy: Vec<Value>,
}

/// Hooks a core system provides to the composite process cycle. None of
/// them has access to the timer variables beyond reading the clock.
pub trait CoreSystem {
    type Register;

    fn read(&mut self, slot: usize, reg: &Self::Register);
    fn detect_fault(&self) -> bool;
    /// `clock` is the process's own clock; `neighbor_clocks` its clock
    /// images, by slot.
    fn core_step(&mut self, clock: Tick, neighbor_clocks: &[Tick], gate: &GateConfig, params: &TimerParams);
    fn write(&self, slot: usize) -> Self::Register;
    fn output(&self) -> Value;
}

impl ToyCoreState {
    /// Legitimate local state: everything agrees with the legitimate values.
    pub fn legitimate(own: Value, neighbor_values: &[Value]) -> Self {
        ToyCoreState {
            output: own,
            copies: neighbor_values.to_vec(),
            shadow: own,
            adv_out: neighbor_values.to_vec(),
            adv_copy: vec![own; neighbor_values.len()],
        }
    }
}

/// Presence of a fault visible from the last register reads.
pub fn toy_detect_fault(s: &ToyCoreState) -> bool {
    s.adv_copy.iter().any(|&c| c != s.output) || s.copies.iter().zip(&s.adv_out).any(|(c, a)| c != a)
}

/// Strict majority of own output plus neighbors' copies of it; own output
/// when no value has a strict majority.
pub fn toy_repair_step(s: &ToyCoreState) -> Value {
    let ballots: Vec<Value> = std::iter::once(s.output).chain(s.adv_copy.iter().copied()).collect();
    let total = ballots.len();
    for &candidate in &ballots {
        let votes = ballots.iter().filter(|&&b| b == candidate).count();
        if 2 * votes > total {
            return candidate;
        }
    }
    s.output
}

impl CoreSystem for ToyCoreState {
    type Register = CoreRegister;

    fn read(&mut self, slot: usize, reg: &CoreRegister) {
        self.adv_out[slot] = reg.output;
        self.adv_copy[slot] = reg.copy;
    }

    fn detect_fault(&self) -> bool {
        toy_detect_fault(self)
    }

    fn core_step(&mut self, clock: Tick, neighbor_clocks: &[Tick], gate: &GateConfig, params: &TimerParams) {
        self.shadow = toy_repair_step(self);
        if gate.copies_at(clock, params) {
            self.output = self.shadow;
            for (slot, &x) in neighbor_clocks.iter().enumerate() {
                // a neighbor advertising a clock past its own copy gate has
                // already installed its repaired output
                if gate.copies_at(x, params) {
                    self.copies[slot] = self.adv_out[slot];
                }
            }
        }
    }

    fn write(&self, slot: usize) -> CoreRegister {
        CoreRegister {
            output: self.output,
            copy: self.copies[slot],
        }
    }

    fn output(&self) -> Value {
        self.output
    }
}

/// Core-system half of a composite system state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoreLayer {
    pub gate: GateConfig,
    /// Output values defining output legitimacy.
    pub legit: Vec<Value>,
    pub procs: Vec<ToyCoreState>,
    /// `registers[p][slot]` is written by `p` for its `slot`-th neighbor.
    pub registers: Vec<Vec<CoreRegister>>,
}

impl CoreLayer {
    pub fn legitimate(topo: &Topology, gate: GateConfig, legit: Vec<Value>) -> Self {
        assert_eq!(legit.len(), topo.n());
        let procs = (0..topo.n())
            .map(|p| {
                let nbr: Vec<Value> = topo.neighbors(p).iter().map(|&q| legit[q]).collect();
                ToyCoreState::legitimate(legit[p], &nbr)
            })
            .collect();
        let registers = (0..topo.n())
            .map(|p| {
                topo.neighbors(p)
                    .iter()
                    .map(|&q| CoreRegister {
                        output: legit[p],
                        copy: legit[q],
                    })
                    .collect()
            })
            .collect();
        CoreLayer {
            gate,
            legit,
            procs,
            registers,
        }
    }

    /// Output legitimacy: every output equals its legitimate value.
    pub fn output_legitimate(&self) -> bool {
        self.procs.iter().zip(&self.legit).all(|(s, &v)| s.output == v)
    }

    /// Core legitimacy: every core variable, image and register field agrees
    /// with the legitimate values.
    pub fn core_legitimate(&self, topo: &Topology) -> bool {
        (0..topo.n()).all(|p| {
            let s = &self.procs[p];
            let v = self.legit[p];
            s.output == v
                && s.shadow == v
                && topo.neighbors(p).iter().enumerate().all(|(slot, &q)| {
                    let vq = self.legit[q];
                    s.copies[slot] == vq
                        && s.adv_out[slot] == vq
                        && s.adv_copy[slot] == v
                        && self.registers[p][slot] == CoreRegister { output: v, copy: vq }
                })
        })
    }

    /// Processes whose core configuration differs from the legitimate one.
    pub fn core_faulty(&self, topo: &Topology) -> Vec<ProcessId> {
        let clean = CoreLayer::legitimate(topo, self.gate, self.legit.clone());
        (0..topo.n())
            .filter(|&p| self.procs[p] != clean.procs[p] || self.registers[p] != clean.registers[p])
            .collect()
    }
}

/// Validity condition for toy-core fault patterns: in every closed
/// neighborhood strictly more than half of the members are not targets.
pub fn closed_neighborhood_majority(topo: &Topology, targets: &[ProcessId]) -> bool {
    let mut bad = vec![false; topo.n()];
    for &p in targets {
        bad[p] = true;
    }
    (0..topo.n()).all(|p| {
        let size = topo.degree(p) + 1;
        let faulty = bad[p] as usize + topo.neighbors(p).iter().filter(|&&q| bad[q]).count();
        2 * faulty < size
    })
}
