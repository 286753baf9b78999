use serde::{Deserialize, Serialize};

use crate::model::{ActionKind, Configuration, Outcome, StepEffect, Status};
use crate::pid::Pid;

use super::{classify, point_contention, Caches, MemoryModel, Partition, RmrError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageEnd {
    /// Normal return to the remainder; also ends the attempt.
    Remainder,
    Crash,
    /// Still running when the trace ended.
    Open,
}

/// Cost of one passage: from leaving the remainder until the next return
/// to it, normal or by crash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageStats {
    pub pid: Pid,
    /// Zero-based passage number of this process.
    pub passage: u64,
    /// Zero-based attempt number of this process.
    pub attempt: u64,
    pub rmr: u64,
    /// Crashes in the enclosing attempt up to the end of this passage.
    pub crashes: u64,
    /// Maximum point contention over the passage.
    pub max_contention: usize,
    pub end: PassageEnd,
    /// Try returned into the CS during this passage.
    pub entered_cs: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptStats {
    pub pid: Pid,
    pub attempt: u64,
    pub rmr: u64,
    pub crashes: u64,
    pub passages: u64,
    pub max_contention: usize,
    pub complete: bool,
}

#[derive(Clone, Copy, Debug)]
struct Open {
    passage: u64,
    attempt: u64,
    rmr: u64,
    max_contention: usize,
    entered_cs: bool,
}

/// Running per-passage RMR tally for one memory model.
#[derive(Clone, Debug)]
pub struct Accountant {
    model: MemoryModel,
    partition: Partition,
    caches: Caches,
    open: Vec<Option<Open>>,
    passages: Vec<u64>,
    attempts: Vec<u64>,
    crashes_in_attempt: Vec<u64>,
    done: Vec<PassageStats>,
}

impl Accountant {
    pub fn new(n: usize, model: MemoryModel) -> Self {
        Accountant {
            model,
            partition: Partition::new(n),
            caches: Caches::new(n),
            open: vec![None; n],
            passages: vec![0; n],
            attempts: vec![0; n],
            crashes_in_attempt: vec![0; n],
            done: Vec::new(),
        }
    }

    pub fn model(&self) -> MemoryModel {
        self.model
    }

    pub fn caches(&self) -> &Caches {
        &self.caches
    }

    /// Account for one step; `pre` and `post` are the configurations around
    /// it. Returns the per-operation remote flags.
    pub fn observe(&mut self, pre: &Configuration, fx: &StepEffect, post: &Configuration) -> Result<Vec<bool>, RmrError> {
        let p = fx.actor;
        let i = p.index();
        if fx.kind == ActionKind::Normal && fx.invoke.is_some() {
            if pre.proc(p).status == Status::Good {
                self.crashes_in_attempt[i] = 0;
                self.attempts[i] += 1;
            }
            self.passages[i] += 1;
            self.open[i] = Some(Open {
                passage: self.passages[i] - 1,
                attempt: self.attempts[i].saturating_sub(1),
                rmr: 0,
                max_contention: 0,
                entered_cs: false,
            });
        }
        let flags = classify(fx, self.model, &self.partition, &mut self.caches)?;
        let k = point_contention(post);
        for slot in self.open.iter_mut().flatten() {
            slot.max_contention = slot.max_contention.max(k);
        }
        if let Some(o) = self.open[i].as_mut() {
            o.rmr += flags.iter().filter(|&&r| r).count() as u64;
            if matches!(fx.outcome, Some(Outcome::TryInCs | Outcome::RecoverInCs)) {
                o.entered_cs = true;
            }
        }
        let end = if fx.was_crash() {
            self.crashes_in_attempt[i] += 1;
            Some(PassageEnd::Crash)
        } else if fx.kind == ActionKind::Normal && fx.next == crate::model::LineId::Rem {
            Some(PassageEnd::Remainder)
        } else {
            None
        };
        if let Some(end) = end {
            if let Some(o) = self.open[i].take() {
                self.done.push(self.close(p, o, end));
            }
        }
        Ok(flags)
    }

    fn close(&self, pid: Pid, o: Open, end: PassageEnd) -> PassageStats {
        PassageStats {
            pid,
            passage: o.passage,
            attempt: o.attempt,
            rmr: o.rmr,
            crashes: self.crashes_in_attempt[pid.index()],
            max_contention: o.max_contention,
            end,
            entered_cs: o.entered_cs,
        }
    }

    /// Completed passages so far.
    pub fn passages(&self) -> &[PassageStats] {
        &self.done
    }

    /// Completed passages followed by the ones still open.
    pub fn finish(&self) -> Vec<PassageStats> {
        let mut out = self.done.clone();
        for p in Pid::all(self.open.len()) {
            if let Some(o) = self.open[p.index()] {
                out.push(self.close(p, o, PassageEnd::Open));
            }
        }
        out
    }
}

/// Per-passage statistics for a trace given as the initial configuration
/// followed by `(effect, post)` pairs.
pub fn aggregate<'a>(
    initial: &'a Configuration,
    steps: impl IntoIterator<Item = (&'a StepEffect, &'a Configuration)>,
    model: MemoryModel,
) -> Result<Vec<PassageStats>, RmrError> {
    let mut acc = Accountant::new(initial.n(), model);
    let mut pre = initial;
    for (fx, post) in steps {
        acc.observe(pre, fx, post)?;
        pre = post;
    }
    Ok(acc.finish())
}

/// Group passages into attempts, in order of first appearance.
pub fn attempts(passages: &[PassageStats]) -> Vec<AttemptStats> {
    let mut out: Vec<AttemptStats> = Vec::new();
    for ps in passages {
        let existing = out.iter_mut().find(|a| a.pid == ps.pid && a.attempt == ps.attempt);
        let a = match existing {
            Some(a) => a,
            None => {
                out.push(AttemptStats {
                    pid: ps.pid,
                    attempt: ps.attempt,
                    rmr: 0,
                    crashes: 0,
                    passages: 0,
                    max_contention: 0,
                    complete: false,
                });
                out.last_mut().unwrap()
            }
        };
        a.rmr += ps.rmr;
        a.crashes = a.crashes.max(ps.crashes);
        a.passages += 1;
        a.max_contention = a.max_contention.max(ps.max_contention);
        a.complete |= ps.end == PassageEnd::Remainder;
    }
    out
}
