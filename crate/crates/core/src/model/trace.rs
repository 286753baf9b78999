//! JSON-lines traces.
//!
//! The first line is a [`TraceHeader`] naming the system the trace was
//! recorded against; every further line is one [`TraceRecord`]. Replaying a
//! trace re-executes the recorded actions and compares each post-state hash.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pid::Pid;

use super::{Action, ActionKind, Configuration, LineId, Method, Model, ModelError, SharedOp, StepEffect, Var};
use super::{AbortPolicy, Mutation};

pub const FORMAT: &str = "rme-trace/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub n: usize,
    #[serde(default)]
    pub mutation: Mutation,
    #[serde(default)]
    pub abort_policy: AbortPolicy,
}

impl TraceHeader {
    pub fn for_model(model: &Model) -> Self {
        TraceHeader { format: FORMAT.to_owned(), n: model.n, mutation: model.mutation, abort_policy: model.abort_policy }
    }

    pub fn model(&self) -> Model {
        Model { n: self.n, mutation: self.mutation, abort_policy: self.abort_policy }
    }
}

/// Serializable form of an [`Action`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionRecord {
    pub actor: Pid,
    pub kind: ActionKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invoke: Option<Method>,
}

impl From<Action> for ActionRecord {
    fn from(a: Action) -> Self {
        ActionRecord {
            actor: a.actor(),
            kind: a.kind(),
            invoke: match a {
                Action::Invoke(_, m) => Some(m),
                _ => None,
            },
        }
    }
}

impl ActionRecord {
    /// The action this record denotes. A normal step with no `invoke` field
    /// is a step at the current line.
    pub fn action(&self) -> Action {
        let p = self.actor;
        match (self.kind, self.invoke) {
            (ActionKind::Normal, Some(m)) => Action::Invoke(p, m),
            (ActionKind::Normal, None) => Action::Step(p),
            (ActionKind::Crash, _) => Action::Crash(p),
            (ActionKind::SetAbort, _) => Action::SetAbort(p),
            (ActionKind::ClearAbort, _) => Action::ClearAbort(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub idx: usize,
    #[serde(flatten)]
    pub action: ActionRecord,
    pub line: LineId,
    pub reads: Vec<Var>,
    pub writes: Vec<SharedOp>,
    /// Hex digest of the configuration after the step.
    pub post_hash: String,
}

impl TraceRecord {
    pub fn new(idx: usize, effect: &StepEffect, post: &Configuration) -> Self {
        TraceRecord {
            idx,
            action: ActionRecord { actor: effect.actor, kind: effect.kind, invoke: effect.invoke },
            line: effect.line,
            reads: effect.reads().collect(),
            writes: effect.writes().chain(effect.env_ops.iter()).copied().collect(),
            post_hash: hex_hash(post.state_hash()),
        }
    }
}

pub fn hex_hash(h: u64) -> String {
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace is empty or lacks a header line")]
    MissingHeader,
    #[error("unsupported trace format `{0}`")]
    Format(String),
    #[error("step {idx}: {source}")]
    Model { idx: usize, source: ModelError },
    #[error("step {idx}: post-state hash {actual} differs from recorded {expected}")]
    HashMismatch { idx: usize, expected: String, actual: String },
}

impl Trace {
    /// Run `actions` from the initial configuration, recording every step.
    pub fn record(model: &Model, actions: impl IntoIterator<Item = Action>) -> Result<Trace, TraceError> {
        let mut cfg = model.initial_config().map_err(|source| TraceError::Model { idx: 0, source })?;
        let mut records = Vec::new();
        for (idx, a) in actions.into_iter().enumerate() {
            let (next, fx) = model.step(&cfg, a).map_err(|source| TraceError::Model { idx, source })?;
            records.push(TraceRecord::new(idx, &fx, &next));
            cfg = next;
        }
        Ok(Trace { header: TraceHeader::for_model(model), records })
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.records.iter().map(|r| r.action.action())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Json { line: 1, source })?;
        if header.format != FORMAT {
            return Err(TraceError::Format(header.format));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let rec = serde_json::from_str(&line?).map_err(|source| TraceError::Json { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(Trace { header, records })
    }

    /// Re-execute the trace, checking every recorded post-state hash.
    /// Returns the configurations after each step and the step effects.
    pub fn replay(&self) -> Result<(Vec<Configuration>, Vec<StepEffect>), TraceError> {
        let model = self.header.model();
        let mut cfg = model.initial_config().map_err(|source| TraceError::Model { idx: 0, source })?;
        let mut configs = Vec::with_capacity(self.records.len());
        let mut effects = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let (next, fx) = model.step(&cfg, r.action.action()).map_err(|source| TraceError::Model { idx: r.idx, source })?;
            let actual = hex_hash(next.state_hash());
            if actual != r.post_hash {
                return Err(TraceError::HashMismatch { idx: r.idx, expected: r.post_hash.clone(), actual });
            }
            configs.push(next.clone());
            effects.push(fx);
            cfg = next;
        }
        Ok((configs, effects))
    }
}
