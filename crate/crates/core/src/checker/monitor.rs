use crate::model::{Action, Configuration, LineId, Method, Outcome, Section, StepEffect, Status};
use crate::pid::Pid;

use super::{bounds, Bounds, Violation, ViolationKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Fcfs {
    Idle,
    /// Doorway completed without abort or crash; not yet in the CS.
    Ahead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct ProcWatch {
    exit_cost: Option<u64>,
    recover: Option<(Status, u64)>,
    abort_cost: Option<u64>,
    no_trivial_armed: bool,
    fcfs: Fcfs,
    /// Processes that finished their doorway before this process's attempt
    /// started and have not yet entered the CS.
    must_precede: u64,
    csr_pending: bool,
}

impl ProcWatch {
    fn new() -> Self {
        ProcWatch {
            exit_cost: None,
            recover: None,
            abort_cost: None,
            no_trivial_armed: false,
            fcfs: Fcfs::Idle,
            must_precede: 0,
            csr_pending: false,
        }
    }
}

/// Incremental checker for the run-level properties: bounded exit,
/// bounded recovery, bounded abort, no trivial aborts, FCFS and CS
/// reentry.
///
/// The monitor's state is small and hashable so an explorer can fold it
/// into its visited-set key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monitor {
    bounds: Bounds,
    procs: Vec<ProcWatch>,
}

fn bit(p: Pid) -> u64 {
    1 << p.index()
}

impl Monitor {
    pub fn new(n: usize) -> Self {
        Self::with_bounds(n, bounds(n))
    }

    pub fn with_bounds(n: usize, bounds: Bounds) -> Self {
        assert!(n <= 64, "monitors track at most 64 processes");
        Monitor { bounds, procs: vec![ProcWatch::new(); n] }
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Feed one transition `pre --a--> post` with its effect.
    pub fn observe(&mut self, pre: &Configuration, a: Action, fx: &StepEffect, post: &Configuration) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = a.actor();
        let b = self.bounds;
        let entered_cs = fx.next == LineId::Cs && fx.line != LineId::Cs && a.is_process_step();

        match a {
            Action::Invoke(_, method) => {
                let fresh = pre.proc(p).status == Status::Good;
                let w = &mut self.procs[p.index()];
                if fresh {
                    w.must_precede = 0;
                }
                if method == Method::Try {
                    w.no_trivial_armed = !pre.proc(p).abortsig;
                } else {
                    w.recover = Some((pre.proc(p).status, fx.cost()));
                }
                if fresh {
                    let ahead = self.ahead_mask(p);
                    self.procs[p.index()].must_precede = ahead;
                }
            }
            Action::Step(_) => {
                let w = &mut self.procs[p.index()];
                if fx.line == LineId::Cs {
                    w.exit_cost = Some(fx.cost());
                } else if let Some(c) = w.exit_cost.as_mut() {
                    *c += fx.cost();
                }
                if let Some((_, c)) = w.recover.as_mut() {
                    *c += fx.cost();
                }
                if fx.line == LineId::T4 && !post.proc(p).abortsig {
                    w.fcfs = Fcfs::Ahead;
                }
            }
            Action::Crash(_) => {
                let w = &mut self.procs[p.index()];
                if fx.line == LineId::Cs {
                    w.csr_pending = true;
                }
                w.exit_cost = None;
                w.recover = None;
                w.abort_cost = None;
                w.no_trivial_armed = false;
                if w.fcfs == Fcfs::Ahead {
                    w.fcfs = Fcfs::Idle;
                    self.release(p);
                }
            }
            Action::SetAbort(_) => {
                let w = &mut self.procs[p.index()];
                w.no_trivial_armed = false;
                if w.fcfs == Fcfs::Ahead {
                    w.fcfs = Fcfs::Idle;
                    self.release(p);
                }
            }
            Action::ClearAbort(_) => {
                self.procs[p.index()].abort_cost = None;
            }
        }

        // bounded exit
        let w = &mut self.procs[p.index()];
        if let Some(c) = w.exit_cost {
            if c > b.b_exit {
                out.push(Violation::new(ViolationKind::BoundedExit, format!("p={p}: exit ran {c} > {} steps", b.b_exit)));
                w.exit_cost = None;
            } else if fx.outcome == Some(Outcome::ExitDone) {
                w.exit_cost = None;
            }
        }

        // bounded recovery
        if let Some((status, c)) = w.recover {
            let returned = matches!(fx.outcome, Some(Outcome::RecoverInCs | Outcome::RecoverInRem));
            let (kind, limit) = match status {
                Status::RecCs => (ViolationKind::BoundedRecCs, Some(b.b_rec_cs)),
                Status::RecExit => (ViolationKind::BoundedRecExit, Some(b.b_rec_exit)),
                Status::Good | Status::RecRem => (ViolationKind::FastRecRem, Some(b.b_fast_rem)),
                Status::RecTry => (
                    ViolationKind::BoundedRecRem,
                    (fx.outcome == Some(Outcome::RecoverInRem)).then_some(b.b_rec_rem),
                ),
            };
            if let Some(limit) = limit.filter(|&l| c > l) {
                out.push(Violation::new(kind, format!("p={p}: recover with status {status:?} ran {c} > {limit} steps")));
                w.recover = None;
            } else if returned {
                if status == Status::RecCs && fx.outcome != Some(Outcome::RecoverInCs) {
                    out.push(Violation::new(
                        ViolationKind::BoundedRecCs,
                        format!("p={p}: recover with status RecCs returned to the remainder"),
                    ));
                }
                w.recover = None;
            }
        }

        // bounded abort: count p's own steps once the premise holds
        if a.is_process_step() {
            if let Some(c) = w.abort_cost.as_mut() {
                *c += fx.cost();
            }
        }
        let ps = post.proc(p);
        if ps.pc == LineId::Rem || ps.pc == LineId::Cs || !ps.abortsig {
            w.abort_cost = None;
        } else if let Some(c) = w.abort_cost {
            if c > b.b_abort {
                out.push(Violation::new(
                    ViolationKind::BoundedAbort,
                    format!("p={p}: still at {} after {c} > {} steps with abort raised", ps.pc, b.b_abort),
                ));
                w.abort_cost = None;
            }
        } else if ps.abortsig
            && (ps.section() == Section::Try || (ps.section() == Section::Recover && ps.status == Status::RecTry))
        {
            w.abort_cost = Some(0);
        }

        // no trivial aborts
        if fx.outcome == Some(Outcome::TryInRem) {
            if w.no_trivial_armed {
                out.push(Violation::new(
                    ViolationKind::NoTrivialAbort,
                    format!("p={p}: try returned to the remainder without an abort signal"),
                ));
            }
            w.no_trivial_armed = false;
        }

        if entered_cs {
            // FCFS
            let pending = self.procs[p.index()].must_precede & self.ahead_mask(p);
            if pending != 0 {
                let ahead: Vec<String> = Pid::all(self.procs.len()).filter(|&q| pending & bit(q) != 0).map(|q| q.to_string()).collect();
                out.push(Violation::new(
                    ViolationKind::Fcfs,
                    format!("p={p} entered the CS ahead of {} whose doorway finished first", ahead.join(", ")),
                ));
            }
            // CSR
            for q in Pid::all(self.procs.len()) {
                if q != p && self.procs[q.index()].csr_pending {
                    out.push(Violation::new(
                        ViolationKind::Csr,
                        format!("p={p} entered the CS while {q} had crashed in it and not returned"),
                    ));
                }
            }
            let w = &mut self.procs[p.index()];
            w.csr_pending = false;
            w.must_precede = 0;
            if w.fcfs == Fcfs::Ahead {
                w.fcfs = Fcfs::Idle;
                self.release(p);
            }
        }
        out
    }

    fn ahead_mask(&self, except: Pid) -> u64 {
        Pid::all(self.procs.len())
            .filter(|&q| q != except && self.procs[q.index()].fcfs == Fcfs::Ahead)
            .fold(0, |m, q| m | bit(q))
    }

    fn release(&mut self, p: Pid) {
        for w in &mut self.procs {
            w.must_precede &= !bit(p);
        }
    }
}

/// Attempt-completion budget for fairly scheduled runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProgressParams {
    /// Crashes a single attempt may suffer.
    pub crashes_per_attempt: u32,
    /// Scheduler rounds (of `n` actions each) allowed per process and per
    /// permitted crash.
    pub rounds_per_process: u64,
}

impl ProgressParams {
    pub fn new(crashes_per_attempt: u32) -> Self {
        ProgressParams { crashes_per_attempt, rounds_per_process: 50 }
    }

    /// Actions an attempt may span: `rounds_per_process * n * (c + 1)`
    /// rounds of `n` actions.
    pub fn action_limit(&self, n: usize) -> u64 {
        let n = n as u64;
        self.rounds_per_process * n * (self.crashes_per_attempt as u64 + 1) * n
    }
}

/// Tracks how long each process's current attempt has been open.
#[derive(Clone, Debug)]
pub struct Progress {
    limit: u64,
    now: u64,
    open_since: Vec<Option<u64>>,
    reported: Vec<bool>,
}

impl Progress {
    pub fn new(n: usize, params: ProgressParams) -> Self {
        Progress { limit: params.action_limit(n), now: 0, open_since: vec![None; n], reported: vec![false; n] }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn observe(&mut self, a: Action, fx: &StepEffect) -> Vec<Violation> {
        self.now += 1;
        let p = a.actor();
        if matches!(a, Action::Invoke(..)) && self.open_since[p.index()].is_none() {
            self.open_since[p.index()] = Some(self.now);
            self.reported[p.index()] = false;
        }
        if matches!(fx.outcome, Some(Outcome::ExitDone | Outcome::TryInRem | Outcome::RecoverInRem)) {
            self.open_since[p.index()] = None;
        }
        let mut out = Vec::new();
        for q in Pid::all(self.open_since.len()) {
            if let Some(start) = self.open_since[q.index()] {
                if self.now - start > self.limit && !self.reported[q.index()] {
                    self.reported[q.index()] = true;
                    out.push(Violation::new(
                        ViolationKind::Progress,
                        format!("p={q}: attempt open for more than {} actions", self.limit),
                    ));
                }
            }
        }
        out
    }

    /// Attempts still open at the end of a run.
    pub fn finish(&self) -> Vec<Violation> {
        Pid::all(self.open_since.len())
            .filter(|q| self.open_since[q.index()].is_some() && !self.reported[q.index()])
            .map(|q| Violation::new(ViolationKind::Progress, format!("p={q}: attempt still open when the run ended")))
            .collect()
    }

    pub fn open_attempts(&self) -> usize {
        self.open_since.iter().filter(|s| s.is_some()).count()
    }
}
