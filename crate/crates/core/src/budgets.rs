//! Calibrated round budgets for the monitors whose bounds are asymptotic.
//!
//! Each budget is `MARGIN` times a linear envelope of the worst case seen
//! in the calibration sweep over [`CALIBRATION_SEEDS`].

use std::ops::Range;

use crate::checkers::MonitorBudgets;
use crate::composition::GateConfig;
use crate::timer::TimerParams;

/// Seeds used by the calibration sweep; disjoint from every test seed.
pub const CALIBRATION_SEEDS: Range<u64> = 10_000..10_200;

pub const MARGIN: u64 = 2;

/// Linear envelope `per_t * T + per_d * D + base` of a calibrated worst case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub per_t: u64,
    pub per_d: u64,
    pub base: u64,
}

impl Envelope {
    pub fn observed(&self, t: u64, d: u64) -> u64 {
        self.per_t * t + self.per_d * d + self.base
    }

    pub fn budget(&self, t: u64, d: u64) -> u64 {
        MARGIN * self.observed(t, d)
    }
}

/// Rounds from a random in-domain state to a timer-final state.
pub const STAB: Envelope = Envelope {
    per_t: 2,
    per_d: 0,
    base: 5,
};

/// Rounds from the first smooth state of the based suffix to a timer-final
/// state.
pub const A1: Envelope = Envelope {
    per_t: 2,
    per_d: 0,
    base: 2,
};

/// Rounds from a core-faulty composite state to lasting output legitimacy,
/// with `T` replaced by the copy threshold `(h+5)*r`.
pub const OUTPUT: Envelope = Envelope {
    per_t: 2,
    per_d: 0,
    base: 1,
};

pub fn stab_rounds(params: &TimerParams) -> u64 {
    STAB.budget(params.t_final() as u64, params.diameter() as u64)
}

pub fn a1_rounds(params: &TimerParams) -> u64 {
    A1.budget(params.t_final() as u64, params.diameter() as u64)
}

pub fn output_rounds(params: &TimerParams, gate: &GateConfig) -> u64 {
    OUTPUT.budget(gate.threshold() as u64, params.diameter() as u64)
}

/// Pinned budgets for an instance.
pub fn monitor_budgets(params: &TimerParams, gate: Option<&GateConfig>) -> MonitorBudgets {
    MonitorBudgets {
        stab_rounds: Some(stab_rounds(params)),
        a1_rounds: Some(a1_rounds(params)),
        output_rounds: gate.map(|g| output_rounds(params, g)),
    }
}
