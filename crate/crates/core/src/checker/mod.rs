//! Safety invariant and run-level property monitors.

mod bounds;
mod invariant;
mod monitor;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::trace::{ActionRecord, Trace, TraceError};
use crate::model::{Action, Model};

pub use bounds::{bounds, Bounds};
pub use invariant::{check_invariant, failing_conditions, CONDITIONS};
pub use monitor::{Monitor, Progress, ProgressParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// One of the thirteen invariant conditions, numbered from 1.
    Cond(u8),
    Mutex,
    BoundedExit,
    Fcfs,
    Csr,
    BoundedRecCs,
    BoundedRecExit,
    FastRecRem,
    BoundedRecRem,
    BoundedAbort,
    NoTrivialAbort,
    Progress,
    /// The algorithm consumed a register that a crash had cleared.
    PoisonRead,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::Cond(c) => write!(f, "Cond({c})"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// A failed check, with the actions that lead from the initial
/// configuration to the configuration where it was detected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub trace: Vec<ActionRecord>,
    pub detail: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, detail: String) -> Self {
        Violation { kind, trace: Vec::new(), detail }
    }

    pub fn with_trace(mut self, actions: impl IntoIterator<Item = Action>) -> Self {
        self.trace = actions.into_iter().map(ActionRecord::from).collect();
        self
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.trace.iter().map(|r| r.action())
    }

    /// Record the embedded trace against `model`, ready to be written out
    /// as JSON lines.
    pub fn to_trace(&self, model: &Model) -> Result<Trace, TraceError> {
        Trace::record(model, self.actions())
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} after {} steps: {}", self.kind, self.trace.len(), self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MonitorParams {
    /// Check attempt completion under this budget; meaningful only for
    /// fairly scheduled runs.
    pub progress: Option<ProgressParams>,
}

/// Replay `actions` against `model` and run every check on every
/// configuration: the invariant, mutual exclusion, and the run monitors.
/// Violations carry the trace prefix that ends where each was detected.
pub fn monitor_trace(
    model: &Model,
    actions: &[Action],
    params: MonitorParams,
) -> Result<Vec<Violation>, TraceError> {
    let mut cfg = model.initial_config().map_err(|source| TraceError::Model { idx: 0, source })?;
    let mut out = Vec::new();
    for v in check_invariant(&cfg) {
        out.push(v);
    }
    let mut monitor = Monitor::new(model.n);
    let mut progress = params.progress.map(|pp| Progress::new(model.n, pp));
    for (idx, &a) in actions.iter().enumerate() {
        let (next, fx) = match model.step(&cfg, a) {
            Ok(r) => r,
            Err(crate::model::ModelError::PoisonRead { pid, line, register }) => {
                let detail = format!("p={pid} read `{register}` at {line}");
                out.push(Violation::new(ViolationKind::PoisonRead, detail).with_trace(actions[..=idx].iter().copied()));
                return Ok(out);
            }
            Err(source) => return Err(TraceError::Model { idx, source }),
        };
        let prefix = || actions[..=idx].iter().copied();
        for v in check_invariant(&next) {
            out.push(v.with_trace(prefix()));
        }
        for v in monitor.observe(&cfg, a, &fx, &next) {
            out.push(v.with_trace(prefix()));
        }
        if let Some(pr) = progress.as_mut() {
            for v in pr.observe(a, &fx) {
                out.push(v.with_trace(prefix()));
            }
        }
        cfg = next;
    }
    if let Some(pr) = progress.as_ref() {
        for v in pr.finish() {
            out.push(v.with_trace(actions.iter().copied()));
        }
    }
    Ok(out)
}
