use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use repair_timer::scheduler::{Event, Outcome};
use repair_timer::timer::Branch;
use repair_timer::trace_io::write_trace;
use repair_timer::{Phase, SchedulerPolicy, SystemState, TimerParams, Topology, Trace};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repair-timer")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn dir_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn config_errors_exit_2() {
    for args in [
        &["run", "--topology", "path:3", "--t-multiplier", "10"][..],
        &["run", "--topology", "path:3", "--seeds", "4..4"],
        &["run", "--topology", "path:3", "--h", "1"],
        &["run", "--topology", "blob:3"],
        &["sweep", "--topology", "ring:5", "--vary", "k", "--values", "3..1"],
        &["check", "/nonexistent/trace.jsonl"],
    ] {
        let out = cli(args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, "topology = \"path:3\"\nt_multiplier = 10\nseeds = \"0..2\"\n").unwrap();
    assert_eq!(code(&cli(&["run", "--config", dir_arg(&cfg)])), 2);
    let out = cli(&["run", "--config", dir_arg(&cfg), "--t-multiplier", "11"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("path:3: 2 run(s), 0 failed"));
}

#[test]
fn unperturbed_run_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--topology", "grid:3x3", "--seeds", "0..3", "--out-dir", dir_arg(tmp.path())]);
    assert_eq!(code(&out), 0);
    let summary = fs::read_to_string(tmp.path().join("summary.jsonl")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    for line in summary.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["metrics"]["state_changes"], 0);
        assert_eq!(v["passed"], true);
    }
}

#[test]
fn check_reproduces_the_online_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--topology", "ring:5", "--k", "2", "--seeds", "0..3", "--out-dir", dir_arg(tmp.path())]);
    assert_ne!(code(&out), 2);
    for seed in 0..3 {
        let trace = tmp.path().join(format!("trace-{seed}.jsonl"));
        let offline = tmp.path().join(format!("offline-{seed}.jsonl"));
        let checked = cli(&["check", dir_arg(&trace), "--out", dir_arg(&offline)]);
        assert_ne!(code(&checked), 2);
        let online = fs::read(tmp.path().join(format!("report-{seed}.jsonl"))).unwrap();
        assert_eq!(fs::read(&offline).unwrap(), online, "seed {seed}");
    }
}

#[test]
fn synthetic_double_reset_trace_fails_d0() {
    let tmp = tempfile::tempdir().unwrap();
    let topo = Topology::path(3).unwrap();
    let params = TimerParams::new(2, 22).unwrap();
    let init = SystemState::timer_final(&topo, &params);
    let s4 = |step| Event {
        step,
        pid: 2,
        stmt: Phase::Dispatch,
        branch: Some(Branch::S4),
        double_reset: false,
        changes: Vec::new(),
    };
    let tr = Trace::from_events(topo, params, SchedulerPolicy::round_robin(), init, vec![s4(1), s4(2)], Outcome::BudgetExhausted);
    let path = tmp.path().join("bad.jsonl");
    write_trace(fs::File::create(&path).unwrap(), &tr).unwrap();

    let out = cli(&["check", dir_arg(&path), "--monitors", "d0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("d0 failed at step 2"));
    let first: serde_json::Value = serde_json::from_slice(out.stdout.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(first["monitor"], "d0");
    assert_eq!(first["verdict"], "fail");
    assert_eq!(first["violation"]["step"], 2);
}

#[test]
fn sweep_emits_one_row_per_instance_and_seed() {
    let out = cli(&[
        "sweep", "--topology", "ring:3", "--vary", "d", "--values", "1,2", "--init", "random", "--seeds", "0..3",
        "--monitors", "stab,a1",
    ]);
    assert_eq!(code(&out), 0);
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let instances: Vec<&str> = rows.iter().map(|r| &r[col("instance")]).collect();
    assert_eq!(instances, ["ring:3", "ring:3", "ring:3", "ring:5", "ring:5", "ring:5"]);
    assert!(rows.iter().all(|r| &r[col("converged")] == "true" && !r[col("rounds_to_final")].is_empty()));
}

#[test]
fn identical_configs_give_identical_summaries() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = cli(&[
            "run", "--topology", "grid:2x3", "--k", "2", "--policy", "adversarial", "--seeds", "5,9", "--no-traces",
            "--out-dir", dir_arg(dir.path()),
        ]);
        assert_ne!(code(&out), 2);
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("summary.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(!a.path().join("trace-5.jsonl").exists());
}

#[test]
fn topology_prints_size_and_edges() {
    let out = cli(&["topology", "--topology", "ring:4", "--distances"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n 4 | edges 4 | diameter 2"));
    assert!(text.lines().any(|l| l == "0 1 2 1"));
}
