//! Per-process repair-timer state machine.
//!
//! One cycle of process `p` is: a read of every incoming link register
//! (one step each), the `w` update, the clock dispatch (the multiway `if`
//! over the four guarded clock assignments, one step whether or not a branch
//! fires), then a write of every outgoing link register (one step each).
//! When a core system is attached the cycle gains two more slots: fault
//! detection right after the reads and the core step right before the writes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clock and `w` values are small non-negative integers.
pub type Tick = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("diameter must be at least 1")]
    ZeroDiameter,
    #[error("final clock value {t} is below 11 * diameter = {min}")]
    FinalTooSmall { t: Tick, min: Tick },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("phase mismatch: expected {expected:?}, process is at {found:?}")]
pub struct PhaseError {
    pub expected: Phase,
    pub found: Phase,
}

/// Diameter `D` and final clock value `T` of one timer instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct TimerParams {
    diameter: Tick,
    t_final: Tick,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    diameter: Tick,
    t_final: Tick,
}

impl TryFrom<RawParams> for TimerParams {
    type Error = ParamsError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        TimerParams::new(raw.diameter, raw.t_final)
    }
}

impl From<TimerParams> for RawParams {
    fn from(p: TimerParams) -> Self {
        RawParams {
            diameter: p.diameter,
            t_final: p.t_final,
        }
    }
}

impl TimerParams {
    pub fn new(diameter: Tick, t_final: Tick) -> Result<Self, ParamsError> {
        if diameter == 0 {
            return Err(ParamsError::ZeroDiameter);
        }
        let min = 11 * diameter;
        if t_final < min {
            return Err(ParamsError::FinalTooSmall { t: t_final, min });
        }
        Ok(TimerParams { diameter, t_final })
    }

    /// `T = 11 * D`, the smallest final value the algorithm admits.
    pub fn minimal(diameter: Tick) -> Result<Self, ParamsError> {
        Self::new(diameter, 11 * diameter)
    }

    pub fn diameter(&self) -> Tick {
        self.diameter
    }

    pub fn t_final(&self) -> Tick {
        self.t_final
    }

    /// Ceiling of `w`: `3D + 1`.
    pub fn w_cap(&self) -> Tick {
        3 * self.diameter + 1
    }

    /// Threshold `T - D` splitting the reset band from the repair band.
    pub fn reset_band(&self) -> Tick {
        self.t_final - self.diameter
    }
}

/// Contents of `Register_pq`, written by `p` and read by `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterValue {
    /// Writer's clock.
    pub clk_img: Tick,
    /// Writer's `w`.
    pub w_img: Tick,
    /// Writer's copy of the reader's clock.
    pub clk_echo: Tick,
    /// Writer's copy of the reader's `w`.
    pub w_echo: Tick,
}

impl RegisterValue {
    pub fn timer_final(params: &TimerParams) -> Self {
        RegisterValue {
            clk_img: params.t_final(),
            w_img: params.w_cap(),
            clk_echo: params.t_final(),
            w_echo: params.w_cap(),
        }
    }
}

/// Image variables `x[q], y[q], r[q], s[q]` kept by a process for one
/// neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Image {
    /// Neighbor's clock.
    pub x: Tick,
    /// Neighbor's `w`.
    pub y: Tick,
    /// Neighbor's copy of our clock.
    pub r: Tick,
    /// Neighbor's copy of our `w`.
    pub s: Tick,
}

/// Program counter within one cycle. Neighbor indices are slots in the
/// process's sorted neighbor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Read(usize),
    /// Core-system fault detection; only present with a core attached.
    Detect,
    ComputeW,
    Dispatch,
    /// Core-system step; only present with a core attached.
    CoreStep,
    Write(usize),
}

impl Phase {
    /// Successor in a cycle of a process with `degree` neighbors.
    pub fn next(self, degree: usize, with_core: bool) -> Phase {
        match self {
            Phase::Read(i) if i + 1 < degree => Phase::Read(i + 1),
            Phase::Read(_) if with_core => Phase::Detect,
            Phase::Read(_) | Phase::Detect => Phase::ComputeW,
            Phase::ComputeW => Phase::Dispatch,
            Phase::Dispatch if with_core => Phase::CoreStep,
            Phase::Dispatch | Phase::CoreStep => Phase::Write(0),
            Phase::Write(i) if i + 1 < degree => Phase::Write(i + 1),
            Phase::Write(_) => Phase::Read(0),
        }
    }

    /// All phases of one cycle, in execution order.
    pub fn cycle(degree: usize, with_core: bool) -> Vec<Phase> {
        let mut out = Vec::with_capacity(2 * degree + 4);
        out.extend((0..degree).map(Phase::Read));
        if with_core {
            out.push(Phase::Detect);
        }
        out.push(Phase::ComputeW);
        out.push(Phase::Dispatch);
        if with_core {
            out.push(Phase::CoreStep);
        }
        out.extend((0..degree).map(Phase::Write));
        out
    }

    pub fn is_valid(self, degree: usize, with_core: bool) -> bool {
        match self {
            Phase::Read(i) | Phase::Write(i) => i < degree,
            Phase::Detect | Phase::CoreStep => with_core,
            Phase::ComputeW | Phase::Dispatch => true,
        }
    }
}

/// The clock assignment chosen by the dispatch step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Smooth increment.
    S3,
    /// Double reset `clock, w <- 0, 0`.
    S4,
    /// `clock <- w`.
    S5,
    /// Increment across a gap.
    S6,
}

impl Branch {
    pub fn is_increment(self) -> bool {
        matches!(self, Branch::S3 | Branch::S6)
    }

    pub fn is_reset(self) -> bool {
        matches!(self, Branch::S4 | Branch::S5)
    }
}

/// Values of the seven local predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredicateSet {
    pub gap: bool,
    pub c_echo: bool,
    pub w_echo: bool,
    pub w_min: Tick,
    pub c_min: Tick,
    pub w_big: bool,
    pub w_bigr: bool,
}

/// One process's timer variables and program counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessTimerState {
    pub clock: Tick,
    pub w: Tick,
    /// Indexed by neighbor slot.
    pub images: Vec<Image>,
    pub phase: Phase,
    /// Whether the cycle includes the core-system slots.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub with_core: bool,
}

impl ProcessTimerState {
    /// A fresh process at the start of a cycle.
    pub fn new(clock: Tick, w: Tick, images: Vec<Image>) -> Self {
        assert!(!images.is_empty(), "a process needs at least one neighbor");
        ProcessTimerState {
            clock,
            w,
            images,
            phase: Phase::Read(0),
            with_core: false,
        }
    }

    /// Local configuration of a timer-final state.
    pub fn timer_final(degree: usize, params: &TimerParams) -> Self {
        let image = Image {
            x: params.t_final(),
            y: params.w_cap(),
            r: params.t_final(),
            s: params.w_cap(),
        };
        Self::new(params.t_final(), params.w_cap(), vec![image; degree])
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    /// Whether clock, `w`, and every image have their timer-final values.
    pub fn is_locally_final(&self, params: &TimerParams) -> bool {
        let t = params.t_final();
        let cap = params.w_cap();
        self.clock == t
            && self.w == cap
            && self.images.iter().all(|im| im.x == t && im.y == cap && im.r == t && im.s == cap)
    }

    /// Whether every variable lies in its value domain.
    pub fn in_domain(&self, params: &TimerParams) -> bool {
        let t = params.t_final();
        let cap = params.w_cap();
        self.clock <= t
            && self.w <= cap
            && self.images.iter().all(|im| im.x <= t && im.r <= t && im.y <= cap && im.s <= cap)
            && self.phase.is_valid(self.degree(), self.with_core)
    }

    pub fn eval_predicates(&self, params: &TimerParams) -> PredicateSet {
        let cap = params.w_cap();
        let gap = self.images.iter().any(|im| self.clock.abs_diff(im.x) > 1);
        let c_echo = self.images.iter().all(|im| im.r == self.clock);
        let w_echo = self.images.iter().all(|im| im.s == self.w);
        let w_min = self.images.iter().map(|im| im.y).min().expect("non-empty neighborhood");
        let c_min = self.images.iter().map(|im| im.x).min().expect("non-empty neighborhood");
        PredicateSet {
            gap,
            c_echo,
            w_echo,
            w_min,
            c_min,
            w_big: self.w >= cap || self.w >= self.clock,
            w_bigr: self.w >= cap || self.w > self.clock,
        }
    }

    fn expect_phase(&self, expected: Phase) -> Result<(), PhaseError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(PhaseError {
                expected,
                found: self.phase,
            })
        }
    }

    /// Advances the program counter to the next slot of the cycle.
    pub fn advance(&mut self) {
        self.phase = self.phase.next(self.degree(), self.with_core);
    }

    /// Read of the register written by the neighbor in `slot`.
    pub fn step_read(&mut self, slot: usize, reg: RegisterValue) -> Result<(), PhaseError> {
        self.expect_phase(Phase::Read(slot))?;
        self.images[slot] = Image {
            x: reg.clk_img,
            y: reg.w_img,
            r: reg.clk_echo,
            s: reg.w_echo,
        };
        self.advance();
        Ok(())
    }

    /// `if wEcho or wMin < w then w <- 1 + min(w, wMin, 3D)`.
    pub fn step_compute_w(&mut self, params: &TimerParams) -> Result<(), PhaseError> {
        self.expect_phase(Phase::ComputeW)?;
        let pr = self.eval_predicates(params);
        if pr.w_echo || pr.w_min < self.w {
            self.w = 1 + self.w.min(pr.w_min).min(3 * params.diameter());
        }
        self.advance();
        Ok(())
    }

    /// Guard of each clock branch, in dispatch order.
    pub fn enabled_branches(&self, params: &TimerParams) -> [(Branch, bool); 4] {
        let pr = self.eval_predicates(params);
        let t = params.t_final();
        let band = params.reset_band();
        let c = self.clock;
        [
            (
                Branch::S3,
                pr.c_echo && c < t && !pr.gap && pr.w_bigr && c <= pr.c_min,
            ),
            (Branch::S4, c > band && pr.gap),
            (Branch::S5, c <= band && pr.gap && !pr.w_big),
            (
                Branch::S6,
                pr.c_echo && c <= band && pr.gap && pr.w_bigr && c <= pr.c_min,
            ),
        ]
    }

    /// The multiway `if`: executes the first enabled branch, if any.
    pub fn step_compute_clock(&mut self, params: &TimerParams) -> Result<Option<Branch>, PhaseError> {
        self.expect_phase(Phase::Dispatch)?;
        let fired = self
            .enabled_branches(params)
            .into_iter()
            .find_map(|(b, on)| on.then_some(b));
        match fired {
            Some(Branch::S3) | Some(Branch::S6) => self.clock += 1,
            Some(Branch::S4) => self.double_reset(),
            Some(Branch::S5) => self.clock = self.w,
            None => {}
        }
        self.advance();
        Ok(fired)
    }

    /// Register contents for the neighbor in `slot`.
    pub fn step_write(&mut self, slot: usize) -> Result<RegisterValue, PhaseError> {
        self.expect_phase(Phase::Write(slot))?;
        let im = self.images[slot];
        let reg = RegisterValue {
            clk_img: self.clock,
            w_img: self.w,
            clk_echo: im.x,
            w_echo: im.y,
        };
        self.advance();
        Ok(reg)
    }

    /// `clock, w <- 0, 0`.
    pub fn double_reset(&mut self) {
        self.clock = 0;
        self.w = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d2() -> TimerParams {
        TimerParams::new(2, 22).unwrap()
    }

    fn state(clock: Tick, w: Tick, images: &[(Tick, Tick, Tick, Tick)], phase: Phase) -> ProcessTimerState {
        ProcessTimerState {
            clock,
            w,
            images: images.iter().map(|&(x, y, r, s)| Image { x, y, r, s }).collect(),
            phase,
            with_core: false,
        }
    }

    #[test]
    fn params_guard() {
        assert_eq!(TimerParams::new(0, 10), Err(ParamsError::ZeroDiameter));
        assert_eq!(
            TimerParams::new(2, 21),
            Err(ParamsError::FinalTooSmall { t: 21, min: 22 })
        );
        let p = TimerParams::minimal(3).unwrap();
        assert_eq!((p.t_final(), p.w_cap(), p.reset_band()), (33, 10, 30));
        assert!(serde_json::from_str::<TimerParams>(r#"{"diameter":2,"t_final":20}"#).is_err());
    }

    #[test]
    fn predicates_no_gap_with_echo() {
        let s = state(5, 0, &[(5, 0, 5, 0), (6, 0, 5, 0)], Phase::Dispatch);
        let pr = s.eval_predicates(&d2());
        assert!(!pr.gap);
        assert!(pr.c_echo);
        assert_eq!(pr.c_min, 5);
    }

    #[test]
    fn predicates_at_timer_final() {
        let s = ProcessTimerState::timer_final(2, &d2());
        let pr = s.eval_predicates(&d2());
        assert!(!pr.gap && pr.c_echo && pr.w_echo);
    }

    #[test]
    fn predicates_w_cap_disjunct() {
        let s = state(3, 7, &[(3, 7, 3, 7)], Phase::Dispatch);
        let pr = s.eval_predicates(&d2());
        assert!(pr.w_big && pr.w_bigr);
        // strict vs non-strict comparison with the clock
        let s = state(4, 4, &[(4, 4, 4, 4)], Phase::Dispatch);
        let pr = s.eval_predicates(&d2());
        assert!(pr.w_big && !pr.w_bigr);
    }

    #[test]
    fn read_copies_register_fields() {
        let mut s = ProcessTimerState::timer_final(2, &d2());
        let before = s.clone();
        s.step_read(0, RegisterValue::timer_final(&d2())).unwrap();
        assert_eq!(s.phase, Phase::Read(1));
        assert_eq!(s.images, before.images);

        s.step_read(1, RegisterValue { clk_img: 0, w_img: 0, clk_echo: 13, w_echo: 2 }).unwrap();
        assert_eq!(s.images[1], Image { x: 0, y: 0, r: 13, s: 2 });
        assert_eq!(s.images[0], before.images[0]);
        assert_eq!((s.clock, s.w), (22, 7));
        assert_eq!(s.phase, Phase::ComputeW);
    }

    #[test]
    fn reads_on_disjoint_slots_commute() {
        let a = RegisterValue { clk_img: 1, w_img: 2, clk_echo: 3, w_echo: 4 };
        let b = RegisterValue { clk_img: 5, w_img: 6, clk_echo: 7, w_echo: 1 };
        let mut s1 = ProcessTimerState::timer_final(2, &d2());
        s1.step_read(0, a).unwrap();
        s1.step_read(1, b).unwrap();
        let mut s2 = ProcessTimerState::timer_final(2, &d2());
        s2.images[1] = Image { x: 5, y: 6, r: 7, s: 1 };
        s2.images[0] = Image { x: 1, y: 2, r: 3, s: 4 };
        assert_eq!(s1.images, s2.images);
    }

    #[test]
    fn read_phase_mismatch() {
        let mut s = ProcessTimerState::timer_final(2, &d2());
        let err = s.step_read(1, RegisterValue::timer_final(&d2())).unwrap_err();
        assert_eq!(err, PhaseError { expected: Phase::Read(1), found: Phase::Read(0) });
        assert!(s.step_write(0).is_err());
        assert!(s.step_compute_w(&d2()).is_err());
        assert!(s.step_compute_clock(&d2()).is_err());
    }

    #[test]
    fn compute_w_examples() {
        let p = d2();
        let mut s = state(0, 4, &[(0, 1, 0, 0), (0, 5, 0, 0)], Phase::ComputeW);
        s.step_compute_w(&p).unwrap();
        assert_eq!(s.w, 2);
        assert_eq!(s.phase, Phase::Dispatch);

        let mut s = ProcessTimerState::timer_final(2, &p);
        s.phase = Phase::ComputeW;
        s.step_compute_w(&p).unwrap();
        assert_eq!(s.w, 7);

        let mut s = state(0, 7, &[(0, 7, 0, 7), (0, 7, 0, 6)], Phase::ComputeW);
        s.step_compute_w(&p).unwrap();
        assert_eq!(s.w, 7);
    }

    #[test]
    fn dispatch_s4() {
        let mut s = state(21, 5, &[(19, 0, 0, 0)], Phase::Dispatch);
        assert_eq!(s.step_compute_clock(&d2()).unwrap(), Some(Branch::S4));
        assert_eq!((s.clock, s.w), (0, 0));
        assert_eq!(s.phase, Phase::Write(0));
    }

    #[test]
    fn dispatch_s5() {
        let mut s = state(10, 3, &[(20, 0, 0, 0)], Phase::Dispatch);
        assert_eq!(s.step_compute_clock(&d2()).unwrap(), Some(Branch::S5));
        assert_eq!(s.clock, 3);
    }

    #[test]
    fn dispatch_s3() {
        let mut s = state(5, 7, &[(5, 0, 5, 0), (6, 0, 5, 0)], Phase::Dispatch);
        assert_eq!(s.step_compute_clock(&d2()).unwrap(), Some(Branch::S3));
        assert_eq!(s.clock, 6);
    }

    #[test]
    fn dispatch_s6() {
        let mut s = state(4, 7, &[(6, 0, 4, 0), (4, 0, 4, 0)], Phase::Dispatch);
        assert_eq!(s.step_compute_clock(&d2()).unwrap(), Some(Branch::S6));
        assert_eq!(s.clock, 5);
    }

    #[test]
    fn dispatch_none_at_timer_final() {
        let mut s = ProcessTimerState::timer_final(3, &d2());
        s.phase = Phase::Dispatch;
        let before = s.clone();
        assert_eq!(s.step_compute_clock(&d2()).unwrap(), None);
        assert_eq!(s.clock, before.clock);
        assert_eq!(s.w, before.w);
        assert_eq!(s.images, before.images);
        assert_eq!(s.phase, Phase::Write(0));
    }

    #[test]
    fn write_emits_four_fields() {
        let mut s = state(6, 7, &[(5, 7, 0, 0)], Phase::Write(0));
        let reg = s.step_write(0).unwrap();
        assert_eq!(reg, RegisterValue { clk_img: 6, w_img: 7, clk_echo: 5, w_echo: 7 });
        assert_eq!(s.phase, Phase::Read(0));

        let mut s = ProcessTimerState::timer_final(2, &d2());
        s.phase = Phase::Write(0);
        assert_eq!(s.step_write(0).unwrap(), RegisterValue { clk_img: 22, w_img: 7, clk_echo: 22, w_echo: 7 });
        assert_eq!(s.step_write(1).unwrap(), RegisterValue::timer_final(&d2()));
    }

    #[test]
    fn cycle_layouts() {
        assert_eq!(
            Phase::cycle(2, false),
            vec![Phase::Read(0), Phase::Read(1), Phase::ComputeW, Phase::Dispatch, Phase::Write(0), Phase::Write(1)]
        );
        for with_core in [false, true] {
            let cyc = Phase::cycle(3, with_core);
            for w in cyc.windows(2) {
                assert_eq!(w[0].next(3, with_core), w[1]);
            }
            assert_eq!(cyc.last().unwrap().next(3, with_core), Phase::Read(0));
        }
    }

    fn arb_state(params: TimerParams) -> impl Strategy<Value = ProcessTimerState> {
        let t = params.t_final();
        let cap = params.w_cap();
        (
            0..=t,
            0..=cap,
            prop::collection::vec((0..=t, 0..=cap, 0..=t, 0..=cap), 1..5),
        )
            .prop_map(|(clock, w, ims)| ProcessTimerState {
                clock,
                w,
                images: ims.into_iter().map(|(x, y, r, s)| Image { x, y, r, s }).collect(),
                phase: Phase::Read(0),
                with_core: false,
            })
    }

    proptest! {
        #[test]
        fn branches_mutually_exclusive(s in arb_state(d2())) {
            let p = d2();
            let enabled: Vec<Branch> = s
                .enabled_branches(&p)
                .into_iter()
                .filter_map(|(b, on)| on.then_some(b))
                .collect();
            prop_assert!(enabled.len() <= 1);
            let mut s = s;
            s.phase = Phase::Dispatch;
            let fired = s.step_compute_clock(&p).unwrap();
            prop_assert_eq!(fired, enabled.first().copied());
        }

        #[test]
        fn steps_stay_in_domain(s in arb_state(d2()), reg in (0u32..=22, 0u32..=7, 0u32..=22, 0u32..=7)) {
            let p = d2();
            let mut s = s;
            let before_clock = s.clock;
            s.step_read(0, RegisterValue { clk_img: reg.0, w_img: reg.1, clk_echo: reg.2, w_echo: reg.3 }).unwrap();
            while s.phase != Phase::ComputeW {
                let slot = match s.phase { Phase::Read(i) => i, _ => unreachable!() };
                s.step_read(slot, RegisterValue::timer_final(&p)).unwrap();
            }
            s.step_compute_w(&p).unwrap();
            prop_assert!(s.in_domain(&p));
            let fired = s.step_compute_clock(&p).unwrap();
            prop_assert!(s.in_domain(&p));
            if s.clock < before_clock {
                prop_assert!(matches!(fired, Some(Branch::S4) | Some(Branch::S5)));
            }
        }

        #[test]
        fn w_fixed_point(deg in 1usize..5) {
            let p = d2();
            let mut s = ProcessTimerState::timer_final(deg, &p);
            for im in &mut s.images { im.s = 0; }
            s.phase = Phase::ComputeW;
            s.step_compute_w(&p).unwrap();
            prop_assert_eq!(s.w, p.w_cap());
        }
    }
}
