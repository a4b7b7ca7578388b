//! Per-seed runs and their artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use repair_timer::checkers::{run_monitors, Metrics, MonitorBudgets, MonitorRun};
use repair_timer::experiment::{composite_base, random_start, run_until_stable, RunRecord};
use repair_timer::fault::{inject, FaultSpec};
use repair_timer::trace_io::{self, Summary};
use repair_timer::{MonitorKind, RunContext, SchedulerPolicy, SystemState, Trace};

use crate::config::{FaultTargets, InitMode, Instance, Settings};

pub struct SeedRun {
    pub seed: u64,
    pub trace: Trace,
    pub result: MonitorRun,
}

pub fn initial_state(settings: &Settings, inst: &Instance, seed: u64) -> Result<SystemState> {
    let (topo, params) = (&inst.topology, &inst.params);
    if settings.init == InitMode::Random {
        return Ok(random_start(topo, params, seed));
    }
    let base = match settings.gate {
        Some(gate) => composite_base(topo, params, gate, seed),
        None => SystemState::timer_final(topo, params),
    };
    let spec = match &settings.targets {
        FaultTargets::None => return Ok(base),
        FaultTargets::Count(k) => FaultSpec::count(*k, seed),
        FaultTargets::Explicit(t) => FaultSpec::explicit(t.clone(), seed),
    };
    let injected = inject(topo, params, &base, &spec.with_fields(settings.fields))?;
    Ok(injected.state)
}

pub fn context(tr: &Trace, budgets: MonitorBudgets, monitors: &[MonitorKind], slack: u32) -> RunContext {
    RunContext::for_trace(tr)
        .with_budgets(budgets)
        .with_monitors(monitors.to_vec())
        .with_round_slack(slack)
}

pub fn run_seed(settings: &Settings, inst: &Instance, seed: u64) -> Result<SeedRun> {
    let init = initial_state(settings, inst, seed)?;
    let policy = SchedulerPolicy::new(settings.policy, seed, settings.aging_bound);
    let trace = run_until_stable(&inst.topology, &inst.params, init, policy, settings.budget_rounds);
    let ctx = context(&trace, settings.budgets(&inst.params), &settings.monitors, settings.round_slack);
    let result = run_monitors(&trace, &ctx);
    Ok(SeedRun { seed, trace, result })
}

/// Report lines: one per monitor, then the metrics.
pub fn write_report<W: Write>(mut out: W, result: &MonitorRun) -> Result<()> {
    for r in &result.reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &MetricsLine { metrics: &result.metrics })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    metrics: &'a Metrics,
}

#[derive(Serialize)]
pub struct SummaryRecord<'a> {
    pub instance: String,
    pub seed: u64,
    pub policy: &'static str,
    pub k_faulty: usize,
    pub k_perturbed: usize,
    pub trace: Summary,
    pub metrics: &'a Metrics,
    pub passed: bool,
    pub failed: Vec<&'static str>,
}

impl<'a> SummaryRecord<'a> {
    pub fn new(instance: &str, run: &'a SeedRun) -> Self {
        let ctx = run.result.reports.first().map(|r| &r.context);
        SummaryRecord {
            instance: instance.to_string(),
            seed: run.seed,
            policy: run.trace.policy.kind.short_name(),
            k_faulty: ctx.map_or(0, |c| c.k_faulty),
            k_perturbed: ctx.map_or(0, |c| c.k_perturbed),
            trace: trace_io::summary(&run.trace),
            metrics: &run.result.metrics,
            passed: run.result.all_passed(),
            failed: run.result.failures().map(|r| r.monitor.name()).collect(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_artifacts(dir: &Path, run: &SeedRun, traces: bool) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if traces {
        trace_io::write_trace(create(&dir.join(format!("trace-{}.jsonl", run.seed)))?, &run.trace)?;
    }
    write_report(create(&dir.join(format!("report-{}.jsonl", run.seed)))?, &run.result)
}

pub fn write_summaries<W: Write>(mut out: W, instance: &str, runs: &[SeedRun]) -> Result<()> {
    for run in runs {
        serde_json::to_writer(&mut out, &SummaryRecord::new(instance, run))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(out: W, rows: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_file(dir: &Path) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    create(&dir.join("summary.jsonl"))
}

pub fn csv_file(dir: &Path) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    create(&dir.join("sweep.csv"))
}
