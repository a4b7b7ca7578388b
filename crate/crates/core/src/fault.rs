//! Fault injection and the perturbed/unperturbed classification.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkers::{check_b, is_timer_final};
use crate::composition::{closed_neighborhood_majority, CoreLayer, Value};
use crate::scheduler::SystemState;
use crate::timer::{Image, Phase, ProcessTimerState, RegisterValue, TimerParams};
use crate::topology::{ProcessId, Topology};

/// Largest process count accepted by exact classification.
pub const EXACT_LIMIT: usize = 12;

/// Core output values are drawn from `0..CORE_DOMAIN`.
pub const CORE_DOMAIN: Value = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("cannot corrupt {k} of {n} processes")]
    TooManyTargets { k: usize, n: usize },
    #[error("target {0} is not a process")]
    TargetOutOfRange(ProcessId),
    #[error("duplicate target {0}")]
    DuplicateTarget(ProcessId),
    #[error("no fields selected for corruption")]
    EmptyMask,
    #[error("base state is not timer-final")]
    BaseNotFinal,
    #[error("core corruption requested but the state has no core layer")]
    NoCoreLayer,
    #[error("targets {0:?} violate the closed-neighborhood majority condition")]
    InvalidPattern(Vec<ProcessId>),
    #[error("no target set of size {0} satisfies the closed-neighborhood majority condition")]
    NoValidPattern(usize),
    #[error("exact classification is limited to {EXACT_LIMIT} processes, got {0}")]
    ExactTooLarge(usize),
}

/// Which parts of a target's configuration are randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldMask {
    pub clock: bool,
    pub w: bool,
    pub images: bool,
    pub registers: bool,
    pub phase: bool,
    #[serde(default)]
    pub core: bool,
}

impl FieldMask {
    /// Every timer field.
    pub const TIMER: FieldMask = FieldMask {
        clock: true,
        w: true,
        images: true,
        registers: true,
        phase: true,
        core: false,
    };

    /// Core variables and core register fields only.
    pub const CORE: FieldMask = FieldMask {
        clock: false,
        w: false,
        images: false,
        registers: false,
        phase: false,
        core: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.clock || self.w || self.images || self.registers || self.phase || self.core)
    }
}

impl Default for FieldMask {
    fn default() -> Self {
        FieldMask::TIMER
    }
}

impl std::str::FromStr for FieldMask {
    type Err = String;

    /// Comma-separated field names, or `all` for every timer field.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(FieldMask::TIMER);
        }
        let mut m = FieldMask {
            clock: false,
            w: false,
            images: false,
            registers: false,
            phase: false,
            core: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "clock" => m.clock = true,
                "w" => m.w = true,
                "images" => m.images = true,
                "registers" => m.registers = true,
                "phase" => m.phase = true,
                "core" => m.core = true,
                other => return Err(format!("unknown field `{other}`")),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Explicit(Vec<ProcessId>),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub targets: Targets,
    #[serde(default)]
    pub fields: FieldMask,
    pub seed: u64,
}

impl FaultSpec {
    pub fn count(k: usize, seed: u64) -> Self {
        FaultSpec {
            targets: Targets::Count(k),
            fields: FieldMask::TIMER,
            seed,
        }
    }

    pub fn explicit(targets: Vec<ProcessId>, seed: u64) -> Self {
        FaultSpec {
            targets: Targets::Explicit(targets),
            fields: FieldMask::TIMER,
            seed,
        }
    }

    pub fn with_fields(mut self, fields: FieldMask) -> Self {
        self.fields = fields;
        self
    }
}

/// Result of an injection: the corrupted state and the processes chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injected {
    pub state: SystemState,
    pub targets: Vec<ProcessId>,
}

fn choose_targets<R: Rng>(topo: &Topology, spec: &FaultSpec, rng: &mut R) -> Result<Vec<ProcessId>, FaultError> {
    let n = topo.n();
    let needs_majority = spec.fields.core;
    match &spec.targets {
        Targets::Explicit(list) => {
            if list.len() > n {
                return Err(FaultError::TooManyTargets { k: list.len(), n });
            }
            let mut seen = vec![false; n];
            for &p in list {
                if p >= n {
                    return Err(FaultError::TargetOutOfRange(p));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(FaultError::DuplicateTarget(p));
                }
            }
            if needs_majority && !closed_neighborhood_majority(topo, list) {
                return Err(FaultError::InvalidPattern(list.clone()));
            }
            Ok(list.clone())
        }
        &Targets::Count(k) => {
            if k > n {
                return Err(FaultError::TooManyTargets { k, n });
            }
            const ATTEMPTS: usize = 1000;
            for _ in 0..ATTEMPTS {
                let mut chosen = sample(rng, n, k).into_vec();
                chosen.sort_unstable();
                if !needs_majority || closed_neighborhood_majority(topo, &chosen) {
                    return Ok(chosen);
                }
            }
            Err(FaultError::NoValidPattern(k))
        }
    }
}

fn corrupt_timer<R: Rng>(
    state: &mut SystemState,
    topo: &Topology,
    params: &TimerParams,
    p: ProcessId,
    mask: FieldMask,
    rng: &mut R,
) {
    let t = params.t_final();
    let cap = params.w_cap();
    let proc = &mut state.procs[p];
    if mask.clock {
        proc.clock = rng.random_range(0..=t);
    }
    if mask.w {
        proc.w = rng.random_range(0..=cap);
    }
    if mask.images {
        for im in &mut proc.images {
            *im = Image {
                x: rng.random_range(0..=t),
                y: rng.random_range(0..=cap),
                r: rng.random_range(0..=t),
                s: rng.random_range(0..=cap),
            };
        }
    }
    if mask.phase {
        let phases = Phase::cycle(topo.degree(p), proc.with_core);
        proc.phase = phases[rng.random_range(0..phases.len())];
    }
    if mask.registers {
        for reg in &mut state.registers[p] {
            *reg = RegisterValue {
                clk_img: rng.random_range(0..=t),
                w_img: rng.random_range(0..=cap),
                clk_echo: rng.random_range(0..=t),
                w_echo: rng.random_range(0..=cap),
            };
        }
    }
}

fn corrupt_core<R: Rng>(core: &mut CoreLayer, p: ProcessId, rng: &mut R) {
    let legit = core.legit[p];
    let me = &mut core.procs[p];
    // the output itself is always wrong, so every target is core-faulty
    me.output = loop {
        let v = rng.random_range(0..CORE_DOMAIN);
        if v != legit {
            break v;
        }
    };
    me.shadow = rng.random_range(0..CORE_DOMAIN);
    for v in me.copies.iter_mut().chain(&mut me.adv_out).chain(&mut me.adv_copy) {
        *v = rng.random_range(0..CORE_DOMAIN);
    }
    for reg in &mut core.registers[p] {
        reg.output = rng.random_range(0..CORE_DOMAIN);
        reg.copy = rng.random_range(0..CORE_DOMAIN);
    }
}

/// Corrupts the targets of `spec` in a timer-final `base`. Only target
/// configurations (variables, phase, and the registers they write) change.
pub fn inject(topo: &Topology, params: &TimerParams, base: &SystemState, spec: &FaultSpec) -> Result<Injected, FaultError> {
    if spec.fields.is_empty() {
        return Err(FaultError::EmptyMask);
    }
    if !is_timer_final(topo, base, params) {
        return Err(FaultError::BaseNotFinal);
    }
    if spec.fields.core && base.core.is_none() {
        return Err(FaultError::NoCoreLayer);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let targets = choose_targets(topo, spec, &mut rng)?;
    let mut state = base.clone();
    for &p in &targets {
        corrupt_timer(&mut state, topo, params, p, spec.fields, &mut rng);
        if spec.fields.core {
            corrupt_core(state.core.as_mut().expect("checked above"), p, &mut rng);
        }
    }
    Ok(Injected { state, targets })
}

/// Whether `p`'s timer configuration differs from its timer-final one.
/// The program counter is not part of the comparison: a timer-final state
/// places no constraint on it.
pub fn differs_from_final(s: &SystemState, params: &TimerParams, p: ProcessId) -> bool {
    let proc: &ProcessTimerState = &s.procs[p];
    !proc.is_locally_final(params) || s.registers[p].iter().any(|r| *r != RegisterValue::timer_final(params))
}

/// Processes whose timer configuration needs change to reach a timer-final
/// state.
pub fn faulty_processes(s: &SystemState, params: &TimerParams) -> Vec<ProcessId> {
    (0..s.n()).filter(|&p| differs_from_final(s, params, p)).collect()
}

pub fn hamming_k(s: &SystemState, params: &TimerParams) -> usize {
    (0..s.n()).filter(|&p| differs_from_final(s, params, p)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Exact,
    Heuristic,
}

impl std::str::FromStr for PerturbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(PerturbMode::Exact),
            "heuristic" => Ok(PerturbMode::Heuristic),
            other => Err(format!("unknown mode `{other}` (expected exact or heuristic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub perturbed: Vec<ProcessId>,
    pub k_perturbed: usize,
    /// Components of the unperturbed set; each is an unperturbed region.
    pub regions: Vec<Vec<ProcessId>>,
    pub mode: PerturbMode,
}

impl PerturbReport {
    pub fn is_perturbed(&self, p: ProcessId) -> bool {
        self.perturbed.binary_search(&p).is_ok()
    }

    /// Membership vector of the unperturbed set.
    pub fn unperturbed_mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![true; n];
        for &p in &self.perturbed {
            m[p] = false;
        }
        m
    }
}

fn good_pair(topo: &Topology, s: &SystemState, p: ProcessId, q: ProcessId) -> bool {
    check_b(topo, p, q, s) && check_b(topo, q, p, s)
}

/// `clock_p = T ∧ x_p[q] ≥ T-1`.
fn boundary_ok(s: &SystemState, params: &TimerParams, p: ProcessId, slot: usize) -> bool {
    let t = params.t_final();
    s.procs[p].clock == t && s.procs[p].images[slot].x + 1 >= t
}

/// Whether `members` is an unperturbed region.
pub fn is_unperturbed_region(topo: &Topology, params: &TimerParams, s: &SystemState, members: &[bool]) -> bool {
    if !members.iter().any(|&m| m) || !topo.induces_connected(members) {
        return false;
    }
    (0..topo.n()).filter(|&p| members[p]).all(|p| {
        s.procs[p].clock > params.reset_band()
            && topo.neighbors(p).iter().enumerate().all(|(slot, &q)| {
                if members[q] {
                    good_pair(topo, s, p, q)
                } else {
                    boundary_ok(s, params, p, slot)
                }
            })
    })
}

fn components(topo: &Topology, members: &[bool]) -> Vec<Vec<ProcessId>> {
    let n = topo.n();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if !members[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < comp.len() {
            for &q in topo.neighbors(comp[i]) {
                if members[q] && !seen[q] {
                    seen[q] = true;
                    comp.push(q);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn heuristic_unperturbed(topo: &Topology, params: &TimerParams, s: &SystemState) -> Vec<bool> {
    let n = topo.n();
    let mut keep: Vec<bool> = (0..n).map(|p| s.procs[p].clock > params.reset_band()).collect();
    loop {
        let mut changed = false;
        for p in 0..n {
            if !keep[p] {
                continue;
            }
            let violated = topo.neighbors(p).iter().enumerate().any(|(slot, &q)| {
                (!keep[q] || !good_pair(topo, s, p, q)) && !boundary_ok(s, params, p, slot)
            });
            if violated {
                keep[p] = false;
                changed = true;
            }
        }
        if !changed {
            return keep;
        }
    }
}

fn exact_unperturbed(topo: &Topology, params: &TimerParams, s: &SystemState) -> Vec<bool> {
    let n = topo.n();
    let mut covered = vec![false; n];
    let mut members = vec![false; n];
    for mask in 1u32..(1u32 << n) {
        for (p, m) in members.iter_mut().enumerate() {
            *m = mask & (1 << p) != 0;
        }
        if is_unperturbed_region(topo, params, s, &members) {
            for p in 0..n {
                covered[p] |= members[p];
            }
        }
    }
    covered
}

pub fn perturbed_set(
    topo: &Topology,
    params: &TimerParams,
    s: &SystemState,
    mode: PerturbMode,
) -> Result<PerturbReport, FaultError> {
    let unperturbed = match mode {
        PerturbMode::Exact if topo.n() > EXACT_LIMIT => return Err(FaultError::ExactTooLarge(topo.n())),
        PerturbMode::Exact => exact_unperturbed(topo, params, s),
        PerturbMode::Heuristic => heuristic_unperturbed(topo, params, s),
    };
    let perturbed: Vec<ProcessId> = (0..topo.n()).filter(|&p| !unperturbed[p]).collect();
    Ok(PerturbReport {
        k_perturbed: perturbed.len(),
        perturbed,
        regions: components(topo, &unperturbed),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{Design, GateConfig};
    use proptest::prelude::*;

    fn path3() -> (Topology, TimerParams) {
        (Topology::path(3).unwrap(), TimerParams::new(2, 22).unwrap())
    }

    fn corrupted_path3() -> SystemState {
        let (topo, params) = path3();
        let mut s = SystemState::timer_final(&topo, &params);
        s.procs[1].clock = 13;
        s.procs[1].w = 2;
        s.registers[1][0] = RegisterValue {
            clk_img: 4,
            w_img: 1,
            clk_echo: 19,
            w_echo: 0,
        };
        s.registers[1][1] = RegisterValue {
            clk_img: 13,
            w_img: 7,
            clk_echo: 2,
            w_echo: 5,
        };
        s
    }

    /// Field-by-field comparison against a freshly built final state.
    fn hamming_oracle(topo: &Topology, params: &TimerParams, s: &SystemState) -> usize {
        let base = SystemState::timer_final(topo, params);
        (0..topo.n())
            .filter(|&p| {
                let (a, b) = (&s.procs[p], &base.procs[p]);
                a.clock != b.clock || a.w != b.w || a.images != b.images || s.registers[p] != base.registers[p]
            })
            .count()
    }

    #[test]
    fn zero_targets_is_identity() {
        let (topo, params) = path3();
        let base = SystemState::timer_final(&topo, &params);
        let inj = inject(&topo, &params, &base, &FaultSpec::count(0, 3)).unwrap();
        assert_eq!(inj.state, base);
        assert!(inj.targets.is_empty());
    }

    #[test]
    fn injection_errors() {
        let (topo, params) = path3();
        let base = SystemState::timer_final(&topo, &params);
        assert_eq!(
            inject(&topo, &params, &base, &FaultSpec::count(4, 0)),
            Err(FaultError::TooManyTargets { k: 4, n: 3 })
        );
        let empty = FaultSpec::count(1, 0).with_fields("".parse().unwrap());
        assert_eq!(inject(&topo, &params, &base, &empty), Err(FaultError::EmptyMask));
        assert_eq!(
            inject(&topo, &params, &base, &FaultSpec::explicit(vec![5], 0)),
            Err(FaultError::TargetOutOfRange(5))
        );
        assert_eq!(
            inject(&topo, &params, &corrupted_path3(), &FaultSpec::count(1, 0)),
            Err(FaultError::BaseNotFinal)
        );
        let core = FaultSpec::count(1, 0).with_fields(FieldMask::CORE);
        assert_eq!(inject(&topo, &params, &base, &core), Err(FaultError::NoCoreLayer));
    }

    #[test]
    fn path_example() {
        let (topo, params) = path3();
        let s = corrupted_path3();
        assert_eq!(hamming_k(&s, &params), 1);
        assert_eq!(hamming_oracle(&topo, &params, &s), 1);
        assert_eq!((s.clock(0), s.clock(2)), (22, 22));
        for mode in [PerturbMode::Exact, PerturbMode::Heuristic] {
            let rep = perturbed_set(&topo, &params, &s, mode).unwrap();
            assert_eq!(rep.perturbed, vec![1]);
            assert_eq!(rep.regions, vec![vec![0], vec![2]]);
        }
    }

    #[test]
    fn two_corrupted() {
        let topo = Topology::ring(6).unwrap();
        let params = TimerParams::minimal(3).unwrap();
        let mut s = SystemState::timer_final(&topo, &params);
        s.procs[0].w = 1;
        s.registers[4][1].w_echo = 0;
        assert_eq!(hamming_k(&s, &params), 2);
        assert_eq!(hamming_oracle(&topo, &params, &s), 2);
        // only the phase differs: not counted
        s.procs[2].phase = Phase::Dispatch;
        assert_eq!(hamming_k(&s, &params), 2);
    }

    #[test]
    fn classification_extremes() {
        let topo = Topology::grid(3, 3).unwrap();
        let params = TimerParams::minimal(topo.diameter()).unwrap();
        let s = SystemState::timer_final(&topo, &params);
        let rep = perturbed_set(&topo, &params, &s, PerturbMode::Exact).unwrap();
        assert!(rep.perturbed.is_empty());
        assert_eq!(rep.regions, vec![(0..9).collect::<Vec<_>>()]);

        let mut low = s.clone();
        for p in &mut low.procs {
            p.clock = params.reset_band();
        }
        for mode in [PerturbMode::Exact, PerturbMode::Heuristic] {
            let rep = perturbed_set(&topo, &params, &low, mode).unwrap();
            assert_eq!(rep.k_perturbed, 9);
            assert!(rep.regions.is_empty());
        }
    }

    #[test]
    fn exact_refuses_large() {
        let topo = Topology::path(13).unwrap();
        let params = TimerParams::minimal(12).unwrap();
        let s = SystemState::timer_final(&topo, &params);
        assert_eq!(
            perturbed_set(&topo, &params, &s, PerturbMode::Exact),
            Err(FaultError::ExactTooLarge(13))
        );
        assert!(perturbed_set(&topo, &params, &s, PerturbMode::Heuristic).is_ok());
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("all".parse::<FieldMask>().unwrap(), FieldMask::TIMER);
        let m: FieldMask = "clock, registers".parse().unwrap();
        assert!(m.clock && m.registers && !m.w && !m.images && !m.phase && !m.core);
        assert!("clock,bogus".parse::<FieldMask>().is_err());
    }

    #[test]
    fn core_injection_respects_majority() {
        let topo = Topology::ring(8).unwrap();
        let params = TimerParams::new(4, 120).unwrap();
        let gate = GateConfig::new(Design::Two, 1, 2);
        let legit: Vec<Value> = (0..8).map(|p| p as Value % CORE_DOMAIN).collect();
        let base = SystemState::timer_final(&topo, &params).with_core(CoreLayer::legitimate(&topo, gate, legit));
        for seed in 0..50 {
            let spec = FaultSpec::count(2, seed).with_fields(FieldMask::CORE);
            let inj = inject(&topo, &params, &base, &spec).unwrap();
            assert!(closed_neighborhood_majority(&topo, &inj.targets));
            let core = inj.state.core.as_ref().unwrap();
            assert_eq!(core.core_faulty(&topo), inj.targets);
            assert_eq!(hamming_k(&inj.state, &params), 0);
        }
        let bad = FaultSpec::explicit(vec![0, 1], 0).with_fields(FieldMask::CORE);
        assert_eq!(
            inject(&topo, &params, &base, &bad),
            Err(FaultError::InvalidPattern(vec![0, 1]))
        );
    }

    fn arb_instance() -> impl Strategy<Value = (Topology, TimerParams, SystemState, Vec<ProcessId>)> {
        (3usize..=10, any::<u64>(), any::<u64>(), 1usize..=4).prop_map(|(n, tseed, fseed, k)| {
            let extra = (tseed % 4) as usize;
            let m = (n - 1 + extra).min(n * (n - 1) / 2);
            let topo = Topology::random_connected(n, m, tseed).unwrap();
            let params = TimerParams::minimal(topo.diameter()).unwrap();
            let base = SystemState::timer_final(&topo, &params);
            let inj = inject(&topo, &params, &base, &FaultSpec::count(k.min(n), fseed)).unwrap();
            (topo, params, inj.state, inj.targets)
        })
    }

    proptest! {
        #[test]
        fn injection_properties((topo, params, s, targets) in arb_instance()) {
            prop_assert!(s.well_formed(&topo, &params));
            let base = SystemState::timer_final(&topo, &params);
            for p in 0..topo.n() {
                if !targets.contains(&p) {
                    prop_assert_eq!(&s.procs[p], &base.procs[p]);
                    prop_assert_eq!(&s.registers[p], &base.registers[p]);
                }
            }
            prop_assert!(hamming_k(&s, &params) <= targets.len());
            prop_assert_eq!(hamming_k(&s, &params), hamming_oracle(&topo, &params, &s));
            let heur = perturbed_set(&topo, &params, &s, PerturbMode::Heuristic).unwrap();
            let exact = perturbed_set(&topo, &params, &s, PerturbMode::Exact).unwrap();
            prop_assert_eq!(&heur.perturbed, &exact.perturbed);
            prop_assert_eq!(&heur.regions, &exact.regions);
            for p in &heur.perturbed {
                prop_assert!(targets.contains(p));
            }
            for region in &heur.regions {
                let mut m = vec![false; topo.n()];
                region.iter().for_each(|&p| m[p] = true);
                prop_assert!(is_unperturbed_region(&topo, &params, &s, &m));
            }
        }
    }
}
