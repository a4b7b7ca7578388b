//! `repair-timer`: batch experiment runner.
//!
//! Exit status: 0 when every monitor passes, 1 when some monitor fails,
//! 2 on configuration or input errors.

mod config;
mod exec;

use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use repair_timer::budgets;
use repair_timer::checkers::{run_monitors, MonitorBudgets};
use repair_timer::experiment::{RunRecord, TopologySpec};
use repair_timer::trace_io;
use repair_timer::PolicyKind;

use config::{parse_monitors, ExperimentArgs, FaultTargets, InitMode, Settings, ValueList};

#[derive(Parser)]
#[command(name = "repair-timer", version, about = "Simulate and check the self-stabilizing repair timer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run per seed; writes traces, monitor reports and a summary.
    Run(ExperimentArgs),
    /// Vary one parameter and emit one CSV row per (instance, seed).
    Sweep(SweepArgs),
    /// Re-run the monitors on a stored trace.
    Check(CheckArgs),
    /// Print a topology's size, diameter and edge list.
    Topology(TopologyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Vary {
    K,
    D,
    Policy,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_enum)]
    vary: Vary,
    /// Values of the varied parameter: `1..=4`, `2,4` or `rr,random`.
    #[arg(long)]
    values: String,
}

#[derive(clap::Args)]
struct CheckArgs {
    trace: PathBuf,
    #[arg(long)]
    monitors: Option<String>,
    #[arg(long)]
    stab_budget: Option<u64>,
    #[arg(long)]
    a1_budget: Option<u64>,
    #[arg(long)]
    output_budget: Option<u64>,
    #[arg(long)]
    no_budgets: bool,
    #[arg(long, default_value_t = 0)]
    round_slack: u32,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TopologyArgs {
    #[arg(long)]
    topology: String,
    /// Also print the all-pairs distance matrix.
    #[arg(long)]
    distances: bool,
}

enum Status {
    Pass,
    MonitorFailure,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Check(args) => cmd_check(&args),
        Command::Topology(args) => cmd_topology(&args).map(|()| Status::Pass),
    };
    match result {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::MonitorFailure) => ExitCode::from(1),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe))
}

fn fmt_max(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |r| r.to_string())
}

fn cmd_run(args: &ExperimentArgs) -> Result<Status> {
    let settings = Settings::resolve(args)?;
    let inst = settings.instance()?;
    let name = settings.topology_spec.to_string();
    let mut runs = Vec::with_capacity(settings.seeds.len());
    for &seed in &settings.seeds {
        runs.push(exec::run_seed(&settings, &inst, seed)?);
    }
    if let Some(dir) = &settings.out_dir {
        for run in &runs {
            exec::write_artifacts(dir, run, settings.write_traces)?;
        }
        exec::write_summaries(exec::summary_file(dir)?, &name, &runs)?;
    }

    let mut out = io::stdout().lock();
    for run in &runs {
        let m = &run.result.metrics;
        let failed: Vec<&str> = run.result.failures().map(|r| r.monitor.name()).collect();
        writeln!(
            out,
            "seed {}: {} | rounds {} | timer-final at round {} | time-accurate from round {} | outputs legitimate from round {}",
            run.seed,
            if failed.is_empty() { "pass".to_string() } else { format!("FAIL {}", failed.join(",")) },
            m.rounds,
            fmt_max(m.rounds_to_final),
            fmt_max(m.rounds_to_time_accurate),
            fmt_max(m.rounds_to_output_legit),
        )?;
    }
    let failed = runs.iter().filter(|r| !r.result.all_passed()).count();
    let max = |f: fn(&exec::SeedRun) -> Option<usize>| runs.iter().filter_map(f).max();
    writeln!(
        out,
        "{name}: {} run(s), {failed} failed; max rounds to timer-final {}, to time accuracy {}, to output legitimacy {}; state changes {}",
        runs.len(),
        fmt_max(max(|r| r.result.metrics.rounds_to_final)),
        fmt_max(max(|r| r.result.metrics.rounds_to_time_accurate)),
        fmt_max(max(|r| r.result.metrics.rounds_to_output_legit)),
        runs.iter().map(|r| r.result.metrics.state_changes).sum::<usize>(),
    )?;
    Ok(if failed == 0 { Status::Pass } else { Status::MonitorFailure })
}

/// Topology with diameter `d` from the same family as `spec`.
fn with_diameter(spec: &TopologySpec, d: u64) -> Result<TopologySpec> {
    let d = usize::try_from(d)?;
    ensure!(d >= 1, "diameter must be positive");
    Ok(match spec {
        TopologySpec::Path(_) => TopologySpec::Path(d + 1),
        TopologySpec::Ring(_) => TopologySpec::Ring(2 * d + 1),
        TopologySpec::Grid(..) => TopologySpec::Grid(d / 2 + 1, d - d / 2 + 1),
        TopologySpec::Star(n) if d == 2 => TopologySpec::Star(*n),
        other => bail!("cannot vary the diameter of `{other}`"),
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<Status> {
    let base = Settings::resolve(&args.exp)?;
    let variants: Vec<Settings> = match args.vary {
        Vary::Policy => {
            let kinds = args
                .values
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<PolicyKind>().map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?;
            kinds
                .into_iter()
                .map(|policy| Settings { policy, ..base.clone() })
                .collect()
        }
        Vary::K => {
            ensure!(base.init == InitMode::Final, "--vary k needs --init final");
            let ks = args.values.parse::<ValueList>().map_err(anyhow::Error::msg)?.0;
            ks.into_iter()
                .map(|k| Settings {
                    targets: if k == 0 { FaultTargets::None } else { FaultTargets::Count(k as usize) },
                    ..base.clone()
                })
                .collect()
        }
        Vary::D => {
            let ds = args.values.parse::<ValueList>().map_err(anyhow::Error::msg)?.0;
            ds.into_iter()
                .map(|d| {
                    Ok(Settings {
                        topology_spec: with_diameter(&base.topology_spec, d)?,
                        ..base.clone()
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    ensure!(!variants.is_empty(), "empty sweep range `{}`", args.values);

    let mut rows: Vec<RunRecord> = Vec::new();
    for settings in &variants {
        let inst = settings.instance()?;
        let name = settings.topology_spec.to_string();
        for &seed in &settings.seeds {
            let run = exec::run_seed(settings, &inst, seed)?;
            rows.push(RunRecord::new(&name, &run.trace, &run.result));
        }
    }
    rows.sort_by(|a, b| {
        (&a.instance, a.k_faulty, a.policy.as_str(), a.seed).cmp(&(&b.instance, b.k_faulty, b.policy.as_str(), b.seed))
    });
    match &base.out_dir {
        Some(dir) => exec::write_csv(exec::csv_file(dir)?, &rows)?,
        None => exec::write_csv(io::stdout().lock(), &rows)?,
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    eprintln!("{} row(s), {failed} with monitor failures", rows.len());
    Ok(if failed == 0 { Status::Pass } else { Status::MonitorFailure })
}

fn cmd_check(args: &CheckArgs) -> Result<Status> {
    let file = std::fs::File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let tr = trace_io::read_trace(BufReader::new(file)).with_context(|| format!("reading {}", args.trace.display()))?;
    let monitors = parse_monitors(args.monitors.as_deref().unwrap_or("all"))?;
    let gate = tr.initial.core.as_ref().map(|c| c.gate);
    let base = if args.no_budgets {
        MonitorBudgets::default()
    } else {
        budgets::monitor_budgets(&tr.params, gate.as_ref())
    };
    let budgets = MonitorBudgets {
        stab_rounds: args.stab_budget.or(base.stab_rounds),
        a1_rounds: args.a1_budget.or(base.a1_rounds),
        output_rounds: args.output_budget.or(base.output_rounds),
    };
    let ctx = exec::context(&tr, budgets, &monitors, args.round_slack);
    let result = run_monitors(&tr, &ctx);
    match &args.out {
        Some(path) => {
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            exec::write_report(io::BufWriter::new(f), &result)?;
        }
        None => exec::write_report(io::stdout().lock(), &result)?,
    }
    for r in result.failures() {
        let at = r.violation.as_ref().map_or(0, |v| v.step);
        eprintln!("{} failed at step {at}", r.monitor);
    }
    Ok(if result.all_passed() { Status::Pass } else { Status::MonitorFailure })
}

fn cmd_topology(args: &TopologyArgs) -> Result<()> {
    let topo = args.topology.parse::<TopologySpec>()?.build()?;
    let mut out = io::stdout().lock();
    let degrees: Vec<usize> = (0..topo.n()).map(|p| topo.degree(p)).collect();
    writeln!(
        out,
        "n {} | edges {} | diameter {} | degree min {} max {}",
        topo.n(),
        topo.edges().len(),
        topo.diameter(),
        degrees.iter().min().copied().unwrap_or(0),
        degrees.iter().max().copied().unwrap_or(0),
    )?;
    write!(out, "{}", topo.to_edge_list())?;
    if args.distances {
        for p in 0..topo.n() {
            let row: Vec<String> = (0..topo.n()).map(|q| topo.dist(p, q).to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    Ok(())
}
