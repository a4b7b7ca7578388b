//! Instance construction and single-run drivers shared by the CLI, the
//! benches, and the test suites.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkers::{is_timer_final, run_monitors, MonitorBudgets, MonitorKind, MonitorRun, RunContext, Verdict};
use crate::composition::{CoreLayer, GateConfig, Value};
use crate::fault::CORE_DOMAIN;
use crate::scheduler::{run, Budget, SchedulerPolicy, SystemState, Trace};
use crate::timer::{ParamsError, TimerParams};
use crate::topology::{Topology, TopologyError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad topology spec `{0}` (expected path:N, ring:N, star:N, grid:RxC, random:N:M:SEED or file:PATH)")]
    Spec(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// A named topology family member or a topology file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TopologySpec {
    Path(usize),
    Ring(usize),
    Star(usize),
    Grid(usize, usize),
    Random { n: usize, m: usize, seed: u64 },
    File(PathBuf),
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, ExperimentError> {
        Ok(match self {
            TopologySpec::Path(n) => Topology::path(*n)?,
            TopologySpec::Ring(n) => Topology::ring(*n)?,
            TopologySpec::Star(n) => Topology::star(*n)?,
            TopologySpec::Grid(r, c) => Topology::grid(*r, *c)?,
            TopologySpec::Random { n, m, seed } => Topology::random_connected(*n, *m, *seed)?,
            TopologySpec::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
                    path: path.clone(),
                    source,
                })?;
                Topology::parse(&text)?
            }
        })
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::Path(n) => write!(f, "path:{n}"),
            TopologySpec::Ring(n) => write!(f, "ring:{n}"),
            TopologySpec::Star(n) => write!(f, "star:{n}"),
            TopologySpec::Grid(r, c) => write!(f, "grid:{r}x{c}"),
            TopologySpec::Random { n, m, seed } => write!(f, "random:{n}:{m}:{seed}"),
            TopologySpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for TopologySpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::Spec(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        Ok(match kind.trim() {
            "path" => TopologySpec::Path(num(rest)?),
            "ring" => TopologySpec::Ring(num(rest)?),
            "star" => TopologySpec::Star(num(rest)?),
            "grid" => {
                let (r, c) = rest.split_once('x').ok_or_else(bad)?;
                TopologySpec::Grid(num(r)?, num(c)?)
            }
            "random" => {
                let parts: Vec<&str> = rest.split(':').collect();
                let [n, m, seed] = parts.as_slice() else {
                    return Err(bad());
                };
                TopologySpec::Random {
                    n: num(n)?,
                    m: num(m)?,
                    seed: seed.trim().parse().map_err(|_| bad())?,
                }
            }
            "file" if !rest.is_empty() => TopologySpec::File(PathBuf::from(rest)),
            _ => return Err(bad()),
        })
    }
}

impl TryFrom<String> for TopologySpec {
    type Error = ExperimentError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TopologySpec> for String {
    fn from(spec: TopologySpec) -> String {
        spec.to_string()
    }
}

/// Timer parameters with `T = multiplier * D`.
pub fn params_for(topo: &Topology, multiplier: u32) -> Result<TimerParams, ParamsError> {
    let d = topo.diameter();
    TimerParams::new(d, multiplier.saturating_mul(d))
}

/// Timer-final, and core-legitimate when a core is attached.
pub fn is_stable(topo: &Topology, params: &TimerParams, s: &SystemState) -> bool {
    is_timer_final(topo, s, params) && s.core.as_ref().is_none_or(|c| c.core_legitimate(topo))
}

/// Runs until [`is_stable`] holds or `max_rounds` rounds complete.
pub fn run_until_stable(
    topo: &Topology,
    params: &TimerParams,
    initial: SystemState,
    policy: SchedulerPolicy,
    max_rounds: u64,
) -> Trace {
    let p = *params;
    run(
        topo,
        params,
        initial,
        policy,
        Budget::rounds(max_rounds),
        Some(&move |t: &Topology, s: &SystemState| is_stable(t, &p, s)),
    )
}

/// Uniformly random in-domain state.
pub fn random_start(topo: &Topology, params: &TimerParams, seed: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SystemState::random(topo, params, &mut rng)
}

/// Timer-final state with a legitimate toy core whose legitimate outputs
/// are drawn from `seed`.
pub fn composite_base(topo: &Topology, params: &TimerParams, gate: GateConfig, seed: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let legit: Vec<Value> = (0..topo.n()).map(|_| rng.random_range(0..CORE_DOMAIN)).collect();
    SystemState::timer_final(topo, params).with_core(CoreLayer::legitimate(topo, gate, legit))
}

/// Runs every enabled monitor with the given budgets.
pub fn check(tr: &Trace, budgets: MonitorBudgets, monitors: &[MonitorKind]) -> MonitorRun {
    let ctx = RunContext::for_trace(tr)
        .with_budgets(budgets)
        .with_monitors(monitors.to_vec());
    run_monitors(tr, &ctx)
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub n: usize,
    pub diameter: u32,
    pub t_final: u32,
    pub k_faulty: usize,
    pub k_perturbed: usize,
    pub policy: String,
    pub seed: u64,
    pub steps: u64,
    pub rounds: usize,
    pub converged: bool,
    pub rounds_to_final: Option<usize>,
    pub rounds_smooth_to_final: Option<usize>,
    pub rounds_to_time_accurate: Option<usize>,
    pub rounds_to_output_legit: Option<usize>,
    pub s4: usize,
    pub s5: usize,
    pub double_resets: usize,
    pub max_resets_per_process: usize,
    /// `monitor=verdict` pairs separated by `;`.
    pub verdicts: String,
    pub passed: bool,
}

impl RunRecord {
    pub fn new(instance: &str, tr: &Trace, result: &MonitorRun) -> Self {
        let ctx = result.reports.first().map(|r| r.context.clone());
        let m = &result.metrics;
        let verdicts = result
            .reports
            .iter()
            .map(|r| {
                let v = match r.verdict {
                    Verdict::Pass => "pass",
                    Verdict::Fail => "fail",
                    Verdict::NotApplicable => "na",
                };
                format!("{}={v}", r.monitor)
            })
            .collect::<Vec<_>>()
            .join(";");
        RunRecord {
            instance: instance.to_string(),
            n: tr.topology.n(),
            diameter: tr.params.diameter(),
            t_final: tr.params.t_final(),
            k_faulty: ctx.as_ref().map_or(0, |c| c.k_faulty),
            k_perturbed: ctx.as_ref().map_or(0, |c| c.k_perturbed),
            policy: tr.policy.kind.short_name().to_string(),
            seed: tr.policy.seed,
            steps: m.steps,
            rounds: m.rounds,
            converged: m.converged,
            rounds_to_final: m.rounds_to_final,
            rounds_smooth_to_final: m.rounds_smooth_to_final,
            rounds_to_time_accurate: m.rounds_to_time_accurate,
            rounds_to_output_legit: m.rounds_to_output_legit,
            s4: m.s4,
            s5: m.s5,
            double_resets: m.double_resets,
            max_resets_per_process: m.max_resets_per_process,
            verdicts,
            passed: result.all_passed(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        for s in ["path:5", "ring:6", "star:4", "grid:4x4", "random:10:14:7", "file:/tmp/x.edges"] {
            let spec: TopologySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        for bad in ["path", "grid:4", "random:1:2", "cube:3", "path:x", "file:"] {
            assert!(bad.parse::<TopologySpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn build_and_params() {
        let topo = "grid:4x4".parse::<TopologySpec>().unwrap().build().unwrap();
        assert_eq!(topo.diameter(), 6);
        let params = params_for(&topo, 11).unwrap();
        assert_eq!(params.t_final(), 66);
        assert!(params_for(&topo, 10).is_err());
    }
}
