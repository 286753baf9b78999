//! Exhaustive and randomized exploration of the model under crash and
//! abort injection.

mod exhaustive;
mod random;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{Violation, ViolationKind};
use crate::model::{AbortPolicy, Model, ModelError, Mutation};
use crate::rmr::Histogram;

pub use exhaustive::{explore_exhaustive, explore_exhaustive_with, shortest_violation, Visit};
pub use random::explore_random;

/// Largest `n` the exhaustive explorer accepts.
pub const EXHAUSTIVE_MAX_N: usize = 3;
/// Default ceiling on exhaustive depth.
pub const DEFAULT_DEPTH_CEILING: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheduler {
    Exhaustive,
    Random { seed: u64 },
    FairRandom { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreParams {
    pub n: usize,
    /// Exhaustive: longest action sequence explored. Random: actions per
    /// schedule before the drain phase.
    pub max_depth: usize,
    /// Exhaustive: crashes per process over the whole run. Random: crashes
    /// per attempt.
    pub crash_budget: u32,
    /// Abort signals raised per process, scoped like `crash_budget`.
    pub abort_budget: u32,
    /// Attempts each process may start.
    pub attempt_limit: Option<u32>,
    pub scheduler: Scheduler,
    pub abort_policy: AbortPolicy,
    pub mutation: Mutation,
    /// Random schedulers: number of schedules.
    pub schedules: u64,
    /// Random schedulers: probability of choosing an enabled crash.
    pub crash_rate: f64,
    /// Random schedulers: probability of choosing an enabled abort-signal
    /// change.
    pub abort_rate: f64,
    /// Random schedulers: probability that an idle process invokes recover
    /// rather than try.
    pub recover_rate: f64,
    pub depth_ceiling: usize,
    /// Random schedulers: collect per-passage RMR histograms.
    pub rmr: bool,
    /// Stop at the first violation instead of exploring the rest of the
    /// space.
    pub stop_on_violation: bool,
}

impl ExploreParams {
    pub fn exhaustive(n: usize, max_depth: usize, crash_budget: u32, abort_budget: u32) -> Self {
        ExploreParams {
            n,
            max_depth,
            crash_budget,
            abort_budget,
            attempt_limit: None,
            scheduler: Scheduler::Exhaustive,
            abort_policy: AbortPolicy::default(),
            mutation: Mutation::None,
            schedules: 0,
            crash_rate: 0.0,
            abort_rate: 0.0,
            recover_rate: 0.0,
            depth_ceiling: DEFAULT_DEPTH_CEILING,
            rmr: false,
            stop_on_violation: false,
        }
    }

    pub fn random(n: usize, schedules: u64, max_depth: usize, scheduler: Scheduler) -> Self {
        ExploreParams {
            n,
            max_depth,
            crash_budget: 2,
            abort_budget: 1,
            attempt_limit: None,
            scheduler,
            abort_policy: AbortPolicy::default(),
            mutation: Mutation::None,
            schedules,
            crash_rate: 0.02,
            abort_rate: 0.02,
            recover_rate: 0.05,
            depth_ceiling: DEFAULT_DEPTH_CEILING,
            rmr: true,
            stop_on_violation: false,
        }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn model(&self) -> Model {
        Model { n: self.n, mutation: self.mutation, abort_policy: self.abort_policy }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Distinct states reached (exhaustive) or configurations visited
    /// (random).
    pub states_visited: u64,
    pub transitions: u64,
    /// Deepest DFS stack (exhaustive) or longest schedule (random).
    pub max_frontier: usize,
    /// First violation of each kind, with the shortest trace found.
    pub violations: Vec<Violation>,
    /// Violations detected in total, duplicates included.
    pub violation_count: u64,
    pub rmr: Vec<Histogram>,
    pub schedules: u64,
    /// Attempts that completed (random schedulers).
    pub attempts_completed: u64,
    /// Digest of every schedule's final state, in schedule order.
    pub trace_digest: String,
    #[serde(with = "secs")]
    pub wall_time: Duration,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        self.violations.iter().map(|v| v.kind).collect()
    }

    /// Keep the shortest example of each violation kind.
    pub(crate) fn record(&mut self, v: Violation) {
        self.violation_count += 1;
        match self.violations.iter_mut().find(|w| w.kind == v.kind) {
            Some(w) if w.trace.len() > v.trace.len() => *w = v,
            Some(_) => {}
            None => {
                self.violations.push(v);
                self.violations.sort_by_key(|v| v.kind);
            }
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExploreError {
    #[error("exhaustive exploration refused: {0}")]
    Guard(String),
    #[error("scheduler {0:?} does not match this entry point")]
    WrongScheduler(Scheduler),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Dispatch on `params.scheduler`.
pub fn explore(params: &ExploreParams) -> Result<Report, ExploreError> {
    match params.scheduler {
        Scheduler::Exhaustive => explore_exhaustive(params),
        Scheduler::Random { .. } | Scheduler::FairRandom { .. } => explore_random(params),
    }
}
