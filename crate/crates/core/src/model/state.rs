use std::fmt;
use std::hash::{Hash, Hasher};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::pid::Pid;
use crate::registry::{Registry, Tok};

use super::line::{Caller, LineId, Section};

/// A volatile register: holds a value, or `Poison` after a crash until the
/// process writes it again.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reg<T> {
    #[default]
    Poison,
    Val(T),
}

impl<T: Copy> Reg<T> {
    pub fn get(self) -> Option<T> {
        match self {
            Reg::Val(v) => Some(v),
            Reg::Poison => None,
        }
    }

    pub fn is_poison(self) -> bool {
        matches!(self, Reg::Poison)
    }
}

impl<T: PartialEq> Reg<T> {
    /// True iff the register holds exactly `v`.
    pub fn is(&self, v: T) -> bool {
        matches!(self, Reg::Val(x) if *x == v)
    }
}

impl<T: fmt::Display> fmt::Display for Reg<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::Val(v) => write!(f, "{v}"),
            Reg::Poison => f.write_str("POISON"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Good,
    RecTry,
    RecCs,
    RecExit,
    RecRem,
}

/// `csowner`: either free with a sequence number, or owned by a process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsOwner {
    Free(u64),
    Owned(Pid),
}

impl fmt::Display for CsOwner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsOwner::Free(s) => write!(f, "(0, {s})"),
            CsOwner::Owned(q) => write!(f, "(1, {q})"),
        }
    }
}

/// Which half of the T6 busy-wait runs next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpinPhase {
    #[default]
    ReadGo,
    ReadAbort,
}

/// Where the abort procedure was called from; decides what its return
/// means and which crash status applies inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortFrom {
    Try,
    Recover,
}

/// The persistent variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SharedMemory {
    pub token: u64,
    pub seq: u64,
    pub csowner: CsOwner,
    /// Indexed by `Pid::index`.
    pub go: Vec<i64>,
    pub registry: Registry,
}

impl SharedMemory {
    pub fn go(&self, p: Pid) -> i64 {
        self.go[p.index()]
    }
}

/// Per-process volatile state plus the environment's abort signal and the
/// recovery status.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProcessState {
    pub pc: LineId,
    pub tok: Reg<u64>,
    /// Token returned by `findmin` inside `promote`. Kept apart from `tok`
    /// because `tok` must keep the value announced at T4 while the process
    /// is inside the promote call at T5.
    pub min_tok: Reg<Tok>,
    pub myseq: Reg<u64>,
    pub peer: Reg<Pid>,
    pub mygo: Reg<i64>,
    pub bit: Reg<u8>,
    pub isaborting: Reg<bool>,
    pub abort_from: Reg<AbortFrom>,
    pub status: Status,
    pub abortsig: bool,
    pub spin: SpinPhase,
    /// The T6 wait has observed the abort signal during the current attempt.
    pub abort_latched: bool,
}

impl ProcessState {
    pub fn new() -> Self {
        ProcessState {
            pc: LineId::Rem,
            tok: Reg::Poison,
            min_tok: Reg::Poison,
            myseq: Reg::Poison,
            peer: Reg::Poison,
            mygo: Reg::Poison,
            bit: Reg::Poison,
            isaborting: Reg::Poison,
            abort_from: Reg::Poison,
            status: Status::Good,
            abortsig: false,
            spin: SpinPhase::ReadGo,
            abort_latched: false,
        }
    }

    /// Clear every register; what a crash leaves behind.
    pub fn poison_registers(&mut self) {
        self.tok = Reg::Poison;
        self.min_tok = Reg::Poison;
        self.myseq = Reg::Poison;
        self.peer = Reg::Poison;
        self.mygo = Reg::Poison;
        self.bit = Reg::Poison;
        self.isaborting = Reg::Poison;
        self.abort_from = Reg::Poison;
        self.spin = SpinPhase::ReadGo;
    }

    /// The section the process is executing, with promote and abort lines
    /// attributed to the method that called them.
    pub fn section(&self) -> Section {
        use LineId::*;
        match self.pc {
            Rem => Section::Remainder,
            T1 | T2 | T3 | T4 | T5 | T6 | T7 | T8 | P(Caller::T5, _) => Section::Try,
            Cs => Section::Critical,
            E1 | E2 | E3 | E4 | E5 | E6 | P(Caller::E5, _) => Section::Exit,
            Rec1 | Rec2 => Section::Recover,
            A1 | A2 | A3 | A4 | A5 | P(Caller::A2, _) => match self.abort_from {
                Reg::Val(AbortFrom::Recover) => Section::Recover,
                _ => Section::Try,
            },
        }
    }

    /// Outside the remainder, or in it with a pending recovery.
    pub fn is_active(&self) -> bool {
        self.pc != LineId::Rem || self.status != Status::Good
    }
}

impl Default for ProcessState {
    fn default() -> Self {
        Self::new()
    }
}

/// Bookkeeping that is not part of the algorithm's state: it never
/// influences a transition and is left out of [`Configuration::state_hash`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    /// Passages started so far; the current one is `passage - 1`.
    pub passage: u64,
    pub attempt: u64,
    pub steps_in_attempt: u64,
    pub crashes_in_attempt: u64,
    pub steps: u64,
}

/// A full snapshot: shared memory, every process and its history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    pub shared: SharedMemory,
    pub procs: Vec<ProcessState>,
    pub history: Vec<History>,
}

impl Configuration {
    pub fn n(&self) -> usize {
        self.procs.len()
    }

    pub fn proc(&self, p: Pid) -> &ProcessState {
        &self.procs[p.index()]
    }

    pub fn proc_mut(&mut self, p: Pid) -> &mut ProcessState {
        &mut self.procs[p.index()]
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> + Clone {
        Pid::all(self.n())
    }

    /// Stable 64-bit digest of the algorithm state. History counters and
    /// internal tree stamps are excluded, so two configurations that differ
    /// only in those hash equal.
    pub fn state_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        self.shared.hash(&mut h);
        self.procs.hash(&mut h);
        h.finish()
    }
}
