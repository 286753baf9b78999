//! Executable model of the recoverable abortable lock.
//!
//! [`Model::step`] is a pure function from a [`Configuration`] and an
//! enabled [`Action`] to the successor configuration and a [`StepEffect`]
//! listing the shared operations performed. Each normal step performs at
//! most one shared operation, except the registry `write`, which runs as a
//! single atomic step and reports every tree-node operation it made.

mod action;
mod line;
mod state;
mod step;
pub mod trace;

use thiserror::Error;

use crate::pid::Pid;

pub use action::{Action, ActionKind, Method, OpKind, Outcome, SharedOp, StepEffect, Value, Var};
pub use line::{Caller, LineId, PLine, ParseLineError, Section};
pub use state::{AbortFrom, Configuration, CsOwner, History, ProcessState, Reg, SharedMemory, SpinPhase, Status};
pub use step::{initial_config, AbortPolicy, Model, Mutation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("a system needs at least one process")]
    NoProcesses,
    #[error("action {action} is not enabled (pc = {line:?})")]
    NotEnabled { action: Action, line: Option<LineId> },
    #[error("process {pid} read register `{register}` at {line} after a crash cleared it")]
    PoisonRead { pid: Pid, line: LineId, register: &'static str },
}
