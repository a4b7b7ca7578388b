//! Experiment configuration: a TOML file whose keys mirror the flags, with
//! flags taking precedence.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use serde::Deserialize;

use repair_timer::budgets;
use repair_timer::checkers::MonitorBudgets;
use repair_timer::experiment::{params_for, TopologySpec};
use repair_timer::{Design, FieldMask, GateConfig, MonitorKind, PolicyKind, TimerParams, Topology};

pub const MIN_T_MULTIPLIER: u32 = 11;

/// A list of values written as `a..b`, `a..=b`, or `a,b,c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueList(pub Vec<u64>);

impl FromStr for ValueList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("bad number `{v}` in `{s}`"));
        if let Some((a, b)) = s.split_once("..=") {
            return Ok(ValueList((num(a)?..=num(b)?).collect()));
        }
        if let Some((a, b)) = s.split_once("..") {
            return Ok(ValueList((num(a)?..num(b)?).collect()));
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(num)
            .collect::<Result<_, _>>()
            .map(ValueList)
    }
}

/// A TOML value that may be a string list spec or an array of integers.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ListValue {
    Spec(String),
    Items(Vec<u64>),
}

impl ListValue {
    fn resolve(&self) -> Result<Vec<u64>> {
        match self {
            ListValue::Spec(s) => Ok(s.parse::<ValueList>().map_err(anyhow::Error::msg)?.0),
            ListValue::Items(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Timer-final state, then inject faults.
    Final,
    /// Uniformly random in-domain state.
    Random,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionFile {
    pub design: Option<String>,
    pub h: Option<u32>,
    pub r: Option<u32>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub topology: Option<String>,
    pub t_multiplier: Option<u32>,
    pub init: Option<InitMode>,
    pub k: Option<usize>,
    pub targets: Option<Vec<usize>>,
    pub fields: Option<String>,
    pub policy: Option<String>,
    pub aging_bound: Option<u64>,
    pub seeds: Option<ListValue>,
    pub budget_rounds: Option<u64>,
    pub monitors: Option<String>,
    pub stab_budget: Option<u64>,
    pub a1_budget: Option<u64>,
    pub output_budget: Option<u64>,
    pub no_budgets: Option<bool>,
    pub round_slack: Option<u32>,
    pub out_dir: Option<PathBuf>,
    pub no_traces: Option<bool>,
    pub composition: Option<CompositionFile>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by `run` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// path:N, ring:N, star:N, grid:RxC, random:N:M:SEED or file:PATH.
    #[arg(long)]
    pub topology: Option<String>,
    /// T = multiplier * D; at least 11.
    #[arg(long)]
    pub t_multiplier: Option<u32>,
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
    /// Number of processes to corrupt, chosen per seed.
    #[arg(long, conflicts_with = "targets")]
    pub k: Option<usize>,
    /// Explicit processes to corrupt.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<usize>>,
    /// Fields to corrupt: comma list of clock,w,images,registers,phase,core or `all`.
    #[arg(long)]
    pub fields: Option<String>,
    /// rr, random or adversarial.
    #[arg(long)]
    pub policy: Option<String>,
    /// Decisions a process may be passed over before it is forced.
    #[arg(long)]
    pub aging_bound: Option<u64>,
    /// Seed list: `0..50`, `1..=4` or `3,7,9`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Round budget per run.
    #[arg(long)]
    pub budget_rounds: Option<u64>,
    /// Comma list of monitors, or `all`.
    #[arg(long)]
    pub monitors: Option<String>,
    /// Override the rounds-to-timer-final budget.
    #[arg(long)]
    pub stab_budget: Option<u64>,
    /// Override the smooth-to-final budget.
    #[arg(long)]
    pub a1_budget: Option<u64>,
    /// Override the output-legitimacy budget.
    #[arg(long)]
    pub output_budget: Option<u64>,
    /// Disable the calibrated budgets.
    #[arg(long)]
    pub no_budgets: bool,
    /// Extra rounds added to every monitored round window.
    #[arg(long)]
    pub round_slack: Option<u32>,
    /// Attach the toy core with output gating design 1 or 2.
    #[arg(long)]
    pub design: Option<String>,
    /// Rounds per fault of the repair procedure.
    #[arg(long)]
    pub h: Option<u32>,
    /// Fault budget of the repair procedure.
    #[arg(long)]
    pub r: Option<u32>,
    /// Directory for traces, reports, summaries and CSV.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Skip writing per-seed trace files.
    #[arg(long)]
    pub no_traces: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultTargets {
    None,
    Count(usize),
    Explicit(Vec<usize>),
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub topology_spec: TopologySpec,
    pub t_multiplier: u32,
    pub init: InitMode,
    pub targets: FaultTargets,
    pub fields: FieldMask,
    pub policy: PolicyKind,
    pub aging_bound: u64,
    pub seeds: Vec<u64>,
    pub budget_rounds: u64,
    pub monitors: Vec<MonitorKind>,
    pub budget_overrides: MonitorBudgets,
    pub use_budgets: bool,
    pub round_slack: u32,
    pub gate: Option<GateConfig>,
    pub out_dir: Option<PathBuf>,
    pub write_traces: bool,
}

pub struct Instance {
    pub topology: Topology,
    pub params: TimerParams,
}

pub fn parse_monitors(s: &str) -> Result<Vec<MonitorKind>> {
    if s.trim() == "all" {
        return Ok(MonitorKind::ALL.to_vec());
    }
    let list = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<MonitorKind>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!list.is_empty(), "empty monitor list");
    Ok(list)
}

impl Settings {
    pub fn resolve(args: &ExperimentArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let comp = file.composition.clone().unwrap_or_default();

        let topology = args
            .topology
            .clone()
            .or(file.topology)
            .context("no topology given (--topology or `topology` in the config)")?;
        let topology_spec: TopologySpec = topology.parse()?;

        let t_multiplier = args.t_multiplier.or(file.t_multiplier).unwrap_or(MIN_T_MULTIPLIER);
        ensure!(
            t_multiplier >= MIN_T_MULTIPLIER,
            "T multiplier {t_multiplier} is below {MIN_T_MULTIPLIER}"
        );

        let design = args.design.clone().or(comp.design);
        let gate = match design {
            Some(d) => {
                let design: Design = d.parse().map_err(anyhow::Error::msg)?;
                let h = args.h.or(comp.h).unwrap_or(1);
                let r = args.r.or(comp.r).unwrap_or(1);
                Some(GateConfig::new(design, h, r))
            }
            None => {
                ensure!(
                    args.h.is_none() && args.r.is_none() && comp.h.is_none() && comp.r.is_none(),
                    "--h and --r need --design"
                );
                None
            }
        };

        let init = args.init.or(file.init).unwrap_or(InitMode::Final);
        let targets = match (&args.k, &args.targets) {
            (Some(k), _) => FaultTargets::Count(*k),
            (None, Some(t)) => FaultTargets::Explicit(t.clone()),
            (None, None) => match (file.k, file.targets) {
                (Some(_), Some(_)) => bail!("config sets both `k` and `targets`"),
                (Some(k), None) => FaultTargets::Count(k),
                (None, Some(t)) => FaultTargets::Explicit(t),
                (None, None) => FaultTargets::None,
            },
        };
        let targets = match targets {
            FaultTargets::Count(0) => FaultTargets::None,
            FaultTargets::Explicit(t) if t.is_empty() => FaultTargets::None,
            other => other,
        };
        if init == InitMode::Random {
            ensure!(targets == FaultTargets::None, "--init random cannot be combined with fault targets");
            ensure!(gate.is_none(), "--init random is not supported with a core layer");
        }

        let fields = match args.fields.clone().or(file.fields) {
            Some(f) => f.parse::<FieldMask>().map_err(anyhow::Error::msg)?,
            None if gate.is_some() => FieldMask::CORE,
            None => FieldMask::TIMER,
        };
        ensure!(!fields.is_empty(), "empty field mask");
        ensure!(!fields.core || gate.is_some(), "corrupting core fields needs --design");

        let policy: PolicyKind = args
            .policy
            .clone()
            .or(file.policy)
            .unwrap_or_else(|| "random".into())
            .parse()
            .map_err(anyhow::Error::msg)?;
        let aging_bound = args.aging_bound.or(file.aging_bound).unwrap_or(8);
        ensure!(aging_bound >= 1, "aging bound must be positive");

        let seeds = match (&args.seeds, &file.seeds) {
            (Some(s), _) => s.parse::<ValueList>().map_err(anyhow::Error::msg)?.0,
            (None, Some(v)) => v.resolve()?,
            (None, None) => vec![0],
        };
        ensure!(!seeds.is_empty(), "empty seed list");

        let budget_rounds = args.budget_rounds.or(file.budget_rounds).unwrap_or(5_000);
        ensure!(budget_rounds >= 1, "round budget must be positive");

        let monitors = parse_monitors(&args.monitors.clone().or(file.monitors).unwrap_or_else(|| "all".into()))?;

        Ok(Settings {
            topology_spec,
            t_multiplier,
            init,
            targets,
            fields,
            policy,
            aging_bound,
            seeds,
            budget_rounds,
            monitors,
            budget_overrides: MonitorBudgets {
                stab_rounds: args.stab_budget.or(file.stab_budget),
                a1_rounds: args.a1_budget.or(file.a1_budget),
                output_rounds: args.output_budget.or(file.output_budget),
            },
            use_budgets: !(args.no_budgets || file.no_budgets.unwrap_or(false)),
            round_slack: args.round_slack.or(file.round_slack).unwrap_or(0),
            gate,
            out_dir: args.out_dir.clone().or(file.out_dir),
            write_traces: !(args.no_traces || file.no_traces.unwrap_or(false)),
        })
    }

    pub fn instance(&self) -> Result<Instance> {
        let topology = self.topology_spec.build()?;
        let params = params_for(&topology, self.t_multiplier)?;
        if let Some(gate) = &self.gate {
            gate.validate(&params, (gate.h * gate.r) as u64)?;
        }
        Ok(Instance { topology, params })
    }

    /// Calibrated budgets, with explicit overrides applied.
    pub fn budgets(&self, params: &TimerParams) -> MonitorBudgets {
        let base = if self.use_budgets {
            budgets::monitor_budgets(params, self.gate.as_ref())
        } else {
            MonitorBudgets::default()
        };
        let o = &self.budget_overrides;
        MonitorBudgets {
            stab_rounds: o.stab_rounds.or(base.stab_rounds),
            a1_rounds: o.a1_rounds.or(base.a1_rounds),
            output_rounds: o.output_rounds.or(base.output_rounds),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!("0..3".parse::<ValueList>().unwrap().0, vec![0, 1, 2]);
        assert_eq!("1..=3".parse::<ValueList>().unwrap().0, vec![1, 2, 3]);
        assert_eq!("4,9".parse::<ValueList>().unwrap().0, vec![4, 9]);
        assert!("3..1".parse::<ValueList>().unwrap().0.is_empty());
        assert!("a..b".parse::<ValueList>().is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            "topology = \"ring:6\"\npolicy = \"rr\"\nseeds = [1, 2]\n[composition]\ndesign = \"2\"\nr = 2\n",
        )
        .unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            policy: Some("adversarial".into()),
            ..Default::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.topology_spec, TopologySpec::Ring(6));
        assert_eq!(s.policy, PolicyKind::AdversarialAging);
        assert_eq!(s.seeds, vec![1, 2]);
        assert_eq!(s.gate, Some(GateConfig::new(Design::Two, 1, 2)));
        assert_eq!(s.fields, FieldMask::CORE);
    }

    #[test]
    fn rejects_small_multiplier_and_empty_seeds() {
        let base = ExperimentArgs {
            topology: Some("path:3".into()),
            ..Default::default()
        };
        let low = ExperimentArgs {
            t_multiplier: Some(10),
            ..base.clone()
        };
        assert!(Settings::resolve(&low).is_err());
        let empty = ExperimentArgs {
            seeds: Some("5..5".into()),
            ..base.clone()
        };
        assert!(Settings::resolve(&empty).is_err());
        assert!(Settings::resolve(&base).is_ok());
    }
}
