//! The min-array ("registry") that waiting processes announce themselves in.
//!
//! Process `p` is the only writer of cell `p`; any process may ask for the
//! minimum cell. Two implementations live here:
//!
//! * [`FlatRegistry`], a trivially linearizable scan used as the reference.
//! * A tournament tree ([`TreeShape`], [`WriteCursor`], [`Registry`]) whose
//!   `write` touches `O(log n)` nodes and whose `findmin` is a single read of
//!   the root. The write is expressed as a resumable cursor that performs
//!   exactly one shared-memory operation per step, so the same code drives
//!   the sequential model, the schedule enumerator in the tests and the
//!   atomics in the native lock.

mod flat;
mod tree;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pid::Pid;

pub use flat::FlatRegistry;
pub use tree::{Cells, Node, NodeOp, NodeOpKind, Registry, RefreshMode, TreeShape, WriteCursor};

/// A token value; `Infinite` marks an empty cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tok {
    Finite(u64),
    Infinite,
}

impl Tok {
    pub fn is_infinite(self) -> bool {
        matches!(self, Tok::Infinite)
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            Tok::Finite(t) => Some(t),
            Tok::Infinite => None,
        }
    }
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Finite(t) => write!(f, "{t}"),
            Tok::Infinite => f.write_str("inf"),
        }
    }
}

/// A registry entry `(pid, tok)`.
///
/// Ordered by token first and pid second; the field order makes the derived
/// `Ord` exactly that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub tok: Tok,
    pub pid: Pid,
}

impl Pair {
    pub fn new(pid: Pid, tok: Tok) -> Self {
        Pair { tok, pid }
    }

    pub fn finite(pid: Pid, tok: u64) -> Self {
        Pair::new(pid, Tok::Finite(tok))
    }

    pub fn empty(pid: Pid) -> Self {
        Pair::new(pid, Tok::Infinite)
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.pid, self.tok)
    }
}

/// Total order on registry entries: smaller token wins, ties go to the
/// smaller pid, and an infinite token is larger than every finite one.
pub fn cmp(a: &Pair, b: &Pair) -> Ordering {
    a.cmp(b)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("process {writer} may not write registry cell of process {owner}")]
    ForeignWrite { writer: Pid, owner: Pid },
    #[error("pid {0} out of range for a registry of {1} cells")]
    UnknownPid(Pid, usize),
}
