//! Line-delimited JSON trace files.
//!
//! A trace file holds one `header` record, one `event` record per step, and
//! a closing `summary` record:
//!
//! ```text
//! {"type":"header","version":1,"topology":[[0,1]],"params":{...},"policy":{...},"initial":{...}}
//! {"type":"event","step":1,"pid":0,"stmt":{"Read":0},"changes":[...]}
//! {"type":"summary","steps":412,"rounds":37,"outcome":"converged","final_state_hash":"5f0c..."}
//! ```
//!
//! Readers rebuild the accounting and final state from the events and
//! reject files whose final state does not match the recorded hash.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{Event, Outcome, SchedulerPolicy, SystemState, Trace};
use crate::timer::TimerParams;
use crate::topology::Topology;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub rounds: usize,
    pub outcome: Outcome,
    pub final_state_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header {
        version: u32,
        topology: Topology,
        params: TimerParams,
        policy: SchedulerPolicy,
        initial: Box<SystemState>,
    },
    Event(Event),
    Summary(Summary),
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Structure { line: usize, reason: String },
    #[error("unsupported trace format version {0}")]
    Version(u32),
    #[error("final state hash mismatch: recorded {recorded}, replayed {replayed}")]
    HashMismatch { recorded: String, replayed: String },
}

pub fn summary(tr: &Trace) -> Summary {
    Summary {
        steps: tr.len(),
        rounds: tr.round_boundaries().len(),
        outcome: tr.outcome,
        final_state_hash: tr.final_state.digest(),
    }
}

pub fn write_trace<W: Write>(mut out: W, tr: &Trace) -> Result<(), TraceIoError> {
    let header = Record::Header {
        version: FORMAT_VERSION,
        topology: tr.topology.clone(),
        params: tr.params,
        policy: tr.policy,
        initial: Box::new(tr.initial.clone()),
    };
    let mut line = |rec: &Record| -> Result<(), TraceIoError> {
        serde_json::to_writer(&mut out, rec).map_err(|source| TraceIoError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&header)?;
    for ev in &tr.events {
        line(&Record::Event(ev.clone()))?;
    }
    line(&Record::Summary(summary(tr)))?;
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Trace, TraceIoError> {
    let mut header = None;
    let mut events = Vec::new();
    let mut closing = None;
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let raw = raw?;
        if raw.trim().is_empty() {
            continue;
        }
        let structure = |reason: &str| TraceIoError::Structure {
            line,
            reason: reason.to_string(),
        };
        if closing.is_some() {
            return Err(structure("record after summary"));
        }
        let rec: Record = serde_json::from_str(&raw).map_err(|source| TraceIoError::Json { line, source })?;
        match rec {
            Record::Header {
                version,
                topology,
                params,
                policy,
                initial,
            } => {
                if header.is_some() {
                    return Err(structure("duplicate header"));
                }
                if version != FORMAT_VERSION {
                    return Err(TraceIoError::Version(version));
                }
                if !initial.well_formed(&topology, &params) {
                    return Err(structure("initial state does not match topology and parameters"));
                }
                header = Some((topology, params, policy, *initial));
            }
            Record::Event(ev) => {
                let Some((topo, ..)) = &header else {
                    return Err(structure("event before header"));
                };
                if ev.pid >= topo.n() || ev.step != events.len() as u64 + 1 {
                    return Err(structure("event out of sequence"));
                }
                events.push(ev);
            }
            Record::Summary(s) => {
                if header.is_none() {
                    return Err(structure("summary before header"));
                }
                closing = Some(s);
            }
        }
    }
    let (topology, params, policy, initial) = header.ok_or(TraceIoError::Structure {
        line: 0,
        reason: "missing header".into(),
    })?;
    let closing = closing.ok_or(TraceIoError::Structure {
        line: 0,
        reason: "missing summary".into(),
    })?;
    let tr = Trace::from_events(topology, params, policy, initial, events, closing.outcome);
    let replayed = tr.final_state.digest();
    if replayed != closing.final_state_hash {
        return Err(TraceIoError::HashMismatch {
            recorded: closing.final_state_hash,
            replayed,
        });
    }
    Ok(tr)
}
