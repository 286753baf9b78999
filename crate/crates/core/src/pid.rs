use std::fmt;

use serde::{Deserialize, Serialize};

/// A process identifier in `1..=n`.
///
/// Identifiers are 1-based to match the way traces and reports name
/// processes; use [`Pid::index`] for slice access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(u32);

impl Pid {
    /// Panics if `id` is zero.
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "process ids are 1-based");
        Pid(id)
    }

    pub fn from_index(index: usize) -> Self {
        Pid(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// All pids of an `n`-process system, in order.
    pub fn all(n: usize) -> impl Iterator<Item = Pid> + Clone {
        (0..n).map(Pid::from_index)
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
