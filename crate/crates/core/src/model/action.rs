use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pid::Pid;
use crate::registry::{Node, NodeOp, NodeOpKind};

use super::line::LineId;
use super::state::CsOwner;

/// The method a process invokes when it leaves the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Try,
    Recover,
}

/// A labeled transition.
///
/// `Invoke` and `Step` are both normal steps; they are split so that the
/// two choices available in the remainder are distinct actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Invoke(Pid, Method),
    Step(Pid),
    Crash(Pid),
    SetAbort(Pid),
    ClearAbort(Pid),
}

impl Action {
    pub fn actor(&self) -> Pid {
        match *self {
            Action::Invoke(p, _)
            | Action::Step(p)
            | Action::Crash(p)
            | Action::SetAbort(p)
            | Action::ClearAbort(p) => p,
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Invoke(..) | Action::Step(_) => ActionKind::Normal,
            Action::Crash(_) => ActionKind::Crash,
            Action::SetAbort(_) => ActionKind::SetAbort,
            Action::ClearAbort(_) => ActionKind::ClearAbort,
        }
    }

    /// Steps taken by the process itself (normal or crash), as opposed to
    /// the environment toggling its abort signal.
    pub fn is_process_step(&self) -> bool {
        matches!(self, Action::Invoke(..) | Action::Step(_) | Action::Crash(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Invoke(p, Method::Try) => write!(f, "p{p}:try"),
            Action::Invoke(p, Method::Recover) => write!(f, "p{p}:recover"),
            Action::Step(p) => write!(f, "p{p}:step"),
            Action::Crash(p) => write!(f, "p{p}:crash"),
            Action::SetAbort(p) => write!(f, "p{p}:set_abort"),
            Action::ClearAbort(p) => write!(f, "p{p}:clear_abort"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Normal,
    Crash,
    SetAbort,
    ClearAbort,
}

/// A shared variable. Registry cells are addressed by tree node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    Token,
    Seq,
    CsOwner,
    Go(Pid),
    AbortSig(Pid),
    Node(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Token => f.write_str("token"),
            Var::Seq => f.write_str("seq"),
            Var::CsOwner => f.write_str("csowner"),
            Var::Go(p) => write!(f, "go[{p}]"),
            Var::AbortSig(p) => write!(f, "abort[{p}]"),
            Var::Node(i) => write!(f, "node[{i}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Int(i64),
    Bool(bool),
    Owner(CsOwner),
    Node(Node),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
    Cas { success: bool },
}

impl OpKind {
    pub fn is_read(self) -> bool {
        matches!(self, OpKind::Read)
    }
}

/// One operation on one shared variable. For reads and failed CASes
/// `before == after`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharedOp {
    pub var: Var,
    pub kind: OpKind,
    pub before: Value,
    pub after: Value,
}

impl SharedOp {
    pub fn read(var: Var, v: Value) -> Self {
        SharedOp { var, kind: OpKind::Read, before: v, after: v }
    }

    pub fn write(var: Var, before: Value, after: Value) -> Self {
        SharedOp { var, kind: OpKind::Write, before, after }
    }

    pub fn cas(var: Var, before: Value, after: Value, success: bool) -> Self {
        SharedOp { var, kind: OpKind::Cas { success }, before, after }
    }

    /// The operation changed the variable's value.
    pub fn changed(&self) -> bool {
        self.before != self.after
    }
}

impl From<NodeOp> for SharedOp {
    fn from(op: NodeOp) -> Self {
        let kind = match op.kind {
            NodeOpKind::Read => OpKind::Read,
            NodeOpKind::Write => OpKind::Write,
            NodeOpKind::Cas { success } => OpKind::Cas { success },
        };
        SharedOp { var: Var::Node(op.index), kind, before: Value::Node(op.before), after: Value::Node(op.after) }
    }
}

/// How a method call ended, reported on the step that returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TryInCs,
    TryInRem,
    RecoverInCs,
    RecoverInRem,
    ExitDone,
}

/// Everything a transition did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEffect {
    pub actor: Pid,
    pub kind: ActionKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invoke: Option<Method>,
    /// Program counter before the step.
    pub line: LineId,
    /// Program counter after the step.
    pub next: LineId,
    pub ops: Vec<SharedOp>,
    /// Writes made by the environment (abort signal changes); they cost the
    /// process nothing but still invalidate cached copies.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub env_ops: Vec<SharedOp>,
    /// The step ran a whole registry method.
    pub composite: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outcome: Option<Outcome>,
}

impl StepEffect {
    pub fn was_crash(&self) -> bool {
        self.kind == ActionKind::Crash
    }

    pub fn reads(&self) -> impl Iterator<Item = Var> + '_ {
        self.ops.iter().filter(|o| o.kind.is_read()).map(|o| o.var)
    }

    pub fn writes(&self) -> impl Iterator<Item = &SharedOp> + '_ {
        self.ops.iter().filter(|o| !o.kind.is_read())
    }

    /// Steps charged against the step bounds: one per shared operation, and
    /// one for a step that touches no shared variable.
    pub fn cost(&self) -> u64 {
        self.ops.len().max(1) as u64
    }
}
