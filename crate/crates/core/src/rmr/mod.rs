//! Remote-memory-reference accounting.
//!
//! Every shared operation in a [`StepEffect`] is classified as remote or
//! local under one of three cost models:
//!
//! * `Dsm`: each variable lives in one process's memory partition; an
//!   operation is remote iff the variable lives elsewhere.
//! * `StrictCc`: every non-read is remote and invalidates every cached copy;
//!   a read is remote iff it misses the reader's cache, and then fills it.
//! * `RelaxedCc`: as strict, except a non-read that leaves the value
//!   unchanged (a failed CAS, say) invalidates nothing.

mod account;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};

use crate::model::{Configuration, OpKind, StepEffect, Value, Var};
use crate::pid::Pid;
use crate::registry::TreeShape;

pub use account::{aggregate, attempts, Accountant, AttemptStats, PassageEnd, PassageStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryModel {
    Dsm,
    StrictCc,
    RelaxedCc,
}

impl MemoryModel {
    pub const ALL: [MemoryModel; 3] = [MemoryModel::Dsm, MemoryModel::StrictCc, MemoryModel::RelaxedCc];

    pub fn name(self) -> &'static str {
        match self {
            MemoryModel::Dsm => "dsm",
            MemoryModel::StrictCc => "strict-cc",
            MemoryModel::RelaxedCc => "relaxed-cc",
        }
    }
}

impl fmt::Display for MemoryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MemoryModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown memory model `{s}` (expected dsm, strict-cc or relaxed-cc)"))
    }
}

/// Where each shared variable lives on a DSM machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    shape: TreeShape,
}

impl Partition {
    pub fn new(n: usize) -> Self {
        Partition { shape: TreeShape::new(n) }
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    /// `token`, `seq` and `csowner` live with process 1; `go[p]` and the
    /// abort flag of `p` with `p`; registry nodes as placed by the tree.
    pub fn home(&self, var: Var) -> Result<Pid, RmrError> {
        match var {
            Var::Token | Var::Seq | Var::CsOwner => Ok(Pid::new(1)),
            Var::Go(p) | Var::AbortSig(p) if p.index() < self.n() => Ok(p),
            Var::Node(i) if i < self.shape.len() => Ok(self.shape.home(i)),
            other => Err(RmrError::UnknownVar(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RmrError {
    #[error("variable {0} does not exist in this system")]
    UnknownVar(Var),
}

/// Per-process caches for the CC models.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Caches {
    lines: Vec<FnvHashMap<Var, Value>>,
}

impl Caches {
    pub fn new(n: usize) -> Self {
        Caches { lines: vec![FnvHashMap::default(); n] }
    }

    pub fn get(&self, p: Pid, var: Var) -> Option<Value> {
        self.lines[p.index()].get(&var).copied()
    }

    pub fn contents(&self, p: Pid) -> impl Iterator<Item = (Var, Value)> + '_ {
        self.lines[p.index()].iter().map(|(k, v)| (*k, *v))
    }

    pub fn clear(&mut self, p: Pid) {
        self.lines[p.index()].clear();
    }

    fn invalidate(&mut self, var: Var) {
        for line in &mut self.lines {
            line.remove(&var);
        }
    }
}

/// Classify the operations of `effect`, updating `caches`. Returns one flag
/// per entry of `effect.ops`, true for a remote reference.
///
/// Environment writes (abort signals) are never charged but still
/// invalidate cached copies; a crash empties the crashing process's cache.
pub fn classify(
    effect: &StepEffect,
    model: MemoryModel,
    partition: &Partition,
    caches: &mut Caches,
) -> Result<Vec<bool>, RmrError> {
    let p = effect.actor;
    let mut out = Vec::with_capacity(effect.ops.len());
    for op in &effect.ops {
        let home = partition.home(op.var)?;
        let remote = match model {
            MemoryModel::Dsm => home != p,
            MemoryModel::StrictCc | MemoryModel::RelaxedCc => {
                if op.kind == OpKind::Read {
                    let line = &mut caches.lines[p.index()];
                    let hit = line.contains_key(&op.var);
                    line.insert(op.var, op.after);
                    !hit
                } else {
                    if model == MemoryModel::StrictCc || op.changed() {
                        caches.invalidate(op.var);
                    }
                    true
                }
            }
        };
        out.push(remote);
    }
    for op in &effect.env_ops {
        partition.home(op.var)?;
        if op.changed() {
            caches.invalidate(op.var);
        }
    }
    if effect.was_crash() {
        caches.clear(p);
    }
    Ok(out)
}

/// Processes outside the remainder or with a pending recovery.
pub fn point_contention(cfg: &Configuration) -> usize {
    cfg.procs.iter().filter(|ps| ps.is_active()).count()
}

/// Distribution of per-passage RMR counts for one memory model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub model: Option<MemoryModel>,
    /// RMR count to number of passages.
    pub buckets: BTreeMap<u64, u64>,
}

impl Histogram {
    pub fn new(model: MemoryModel) -> Self {
        Histogram { model: Some(model), buckets: BTreeMap::new() }
    }

    pub fn add(&mut self, rmr: u64) {
        *self.buckets.entry(rmr).or_default() += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (&k, &v) in &other.buckets {
            *self.buckets.entry(k).or_default() += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.buckets.values().sum()
    }

    pub fn max(&self) -> Option<u64> {
        self.buckets.keys().next_back().copied()
    }

    pub fn mean(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.buckets.iter().map(|(k, v)| k * v).sum::<u64>() as f64 / total as f64)
    }

    /// `model,rmr,passages` rows, without a header.
    pub fn csv_rows(&self) -> String {
        let name = self.model.map(|m| m.name()).unwrap_or("");
        self.buckets.iter().map(|(k, v)| format!("{name},{k},{v}\n")).collect()
    }
}

pub const CSV_HEADER: &str = "model,rmr,passages\n";

/// Constants of the per-attempt DSM bound `C2 * f + C0 + C1 * ceil(log2 n)`,
/// where `f` counts the crashes in the attempt.
///
/// An attempt performs at most two registry writes that propagate (the
/// announcement at T4 and the first clear); a clear of an already settled
/// cell is one local read. A propagating write makes at most 8 remote
/// references per tree level. Outside those writes, a crash-free attempt
/// makes at most 24 remote references (T1, T2, two promote calls, A3 and the
/// exit) and every crash adds a recovery passage of at most 16 (REC2's
/// abort call and a repeated exit).
pub mod dsm_bound {
    pub const C0: u64 = 24;
    pub const C1: u64 = 16;
    pub const C2: u64 = 16;

    pub fn per_attempt(crashes: u64, levels: u32) -> u64 {
        C2 * crashes + C0 + C1 * levels as u64
    }
}
