//! Simulation and runtime verification of a self-stabilizing repair timer
//! for asynchronous shared-register networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: static communication graphs and their distances.
//! - [`timer`]: per-process timer state and the atomic steps of one cycle.
//! - [`scheduler`]: interleavings, traces, and round accounting.
//! - [`fault`]: fault injection and perturbed/unperturbed classification.
//! - [`checkers`]: state predicates, trace predicates, and monitors.
//! - [`composition`]: gating a core system's output on the timer.
//! - [`budgets`]: calibrated round budgets for the asymptotic monitors.
//! - [`trace_io`]: JSON-lines trace serialization and summaries.
//! - [`experiment`]: instance construction and batch runs shared by the CLI
//!   and the test suites.

pub mod budgets;
pub mod checkers;
pub mod composition;
pub mod experiment;
pub mod fault;
pub mod scheduler;
pub mod timer;
pub mod topology;
pub mod trace_io;

pub use checkers::{CheckReport, MonitorKind, RunContext, Verdict};
pub use composition::{CoreLayer, Design, GateConfig, ToyCoreState};
pub use fault::{FaultSpec, FieldMask, PerturbMode, PerturbReport};
pub use scheduler::{run, Budget, Event, PolicyKind, SchedulerPolicy, SystemState, Trace};
pub use timer::{Phase, ProcessTimerState, RegisterValue, TimerParams};
pub use topology::{ProcessId, Topology};
