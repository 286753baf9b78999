use std::hash::Hasher;
use std::time::Instant;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checker::{check_invariant, Monitor, Progress, ProgressParams, Violation, ViolationKind};
use crate::model::{Action, Configuration, Method, Model, ModelError, Outcome, Status};
use crate::pid::Pid;
use crate::rmr::{Accountant, Histogram, MemoryModel, PassageEnd};

use super::{ExploreError, ExploreParams, Report, Scheduler};

/// Schedules handed to the worker pool at a time; results are merged in
/// schedule order so the report does not depend on the thread count.
const CHUNK: u64 = 1024;

#[derive(Clone, Copy, Default)]
struct Budget {
    crashes: u32,
    aborts: u32,
    attempts: u32,
}

struct Outcomes {
    violations: Vec<Violation>,
    configs: u64,
    len: usize,
    attempts_completed: u64,
    rmr: Vec<Histogram>,
    final_hash: u64,
}

/// Per-schedule seed: a fixed mix of the run seed and the schedule index.
fn schedule_seed(seed: u64, index: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write_u64(index);
    h.finish()
}

struct Run<'a> {
    params: &'a ExploreParams,
    model: Model,
    fair: bool,
    rng: ChaCha8Rng,
    cfg: Configuration,
    monitor: Monitor,
    progress: Option<Progress>,
    accountants: Vec<Accountant>,
    budget: Vec<Budget>,
    last_run: Vec<u64>,
    path: Vec<Action>,
    out: Outcomes,
}

impl Run<'_> {
    /// Active processes must be scheduled within this many actions.
    fn window(&self) -> u64 {
        4 * self.params.n as u64
    }

    fn now(&self) -> u64 {
        self.path.len() as u64
    }

    fn may_start(&self, p: Pid) -> bool {
        let ps = self.cfg.proc(p);
        ps.status != Status::Good
            || self.params.attempt_limit.is_none_or(|l| self.budget[p.index()].attempts < l)
    }

    /// The process action `p` would take now, if any.
    fn process_action(&mut self, p: Pid, draining: bool) -> Option<Action> {
        let ps = self.cfg.proc(p);
        if ps.pc != crate::model::LineId::Rem {
            return Some(Action::Step(p));
        }
        if ps.status != Status::Good {
            return Some(Action::Invoke(p, Method::Recover));
        }
        if draining || !self.may_start(p) {
            return None;
        }
        let m = if self.rng.gen_bool(self.params.recover_rate) { Method::Recover } else { Method::Try };
        Some(Action::Invoke(p, m))
    }

    fn choose(&mut self, draining: bool) -> Option<Action> {
        let n = self.params.n;
        if !draining {
            let crashable: Vec<Pid> = self
                .cfg
                .pids()
                .filter(|&p| self.cfg.proc(p).pc != crate::model::LineId::Rem)
                .filter(|&p| self.budget[p.index()].crashes < self.params.crash_budget)
                .collect();
            if !crashable.is_empty() && self.rng.gen_bool(self.params.crash_rate) {
                return Some(Action::Crash(crashable[self.rng.gen_range(0..crashable.len())]));
            }
            let env: Vec<Action> = self
                .model
                .all_enabled(&self.cfg)
                .into_iter()
                .filter(|a| match a {
                    Action::SetAbort(p) => self.budget[p.index()].aborts < self.params.abort_budget,
                    Action::ClearAbort(_) => true,
                    _ => false,
                })
                .collect();
            if !env.is_empty() && self.rng.gen_bool(self.params.abort_rate) {
                return Some(env[self.rng.gen_range(0..env.len())]);
            }
        }
        if self.fair {
            let now = self.now();
            let starved = self
                .cfg
                .pids()
                .filter(|&p| self.cfg.proc(p).is_active() && now - self.last_run[p.index()] >= self.window())
                .min_by_key(|&p| self.last_run[p.index()]);
            if let Some(p) = starved {
                return self.process_action(p, draining);
            }
        }
        let start = self.rng.gen_range(0..n);
        let mut candidates = Vec::with_capacity(n);
        for i in 0..n {
            let p = Pid::from_index((start + i) % n);
            let ps = self.cfg.proc(p);
            let runnable = ps.pc != crate::model::LineId::Rem || ps.status != Status::Good || (!draining && self.may_start(p));
            if runnable {
                candidates.push(p);
            }
        }
        if candidates.is_empty() {
            return None;
        }
        let p = candidates[self.rng.gen_range(0..candidates.len())];
        self.process_action(p, draining)
    }

    /// Apply `a`; false once the schedule must stop.
    fn apply(&mut self, a: Action) -> Result<bool, ExploreError> {
        let p = a.actor();
        self.path.push(a);
        let (post, fx) = match self.model.step(&self.cfg, a) {
            Ok(r) => r,
            Err(ModelError::PoisonRead { pid, line, register }) => {
                let v = Violation::new(ViolationKind::PoisonRead, format!("p={pid} read `{register}` at {line}"));
                self.out.violations.push(v.with_trace(self.path.iter().copied()));
                return Ok(false);
            }
            Err(e) => return Err(e.into()),
        };
        let b = &mut self.budget[p.index()];
        match a {
            Action::Invoke(..) if self.cfg.proc(p).status == Status::Good => {
                *b = Budget { crashes: 0, aborts: 0, attempts: b.attempts + 1 };
            }
            Action::Crash(_) => b.crashes += 1,
            Action::SetAbort(_) => b.aborts += 1,
            _ => {}
        }
        if a.is_process_step() {
            self.last_run[p.index()] = self.now();
        }
        let mut bad = self.monitor.observe(&self.cfg, a, &fx, &post);
        bad.extend(check_invariant(&post));
        if let Some(progress) = self.progress.as_mut() {
            bad.extend(progress.observe(a, &fx));
        }
        for acc in &mut self.accountants {
            acc.observe(&self.cfg, &fx, &post).expect("model variables all have a home");
        }
        if matches!(fx.outcome, Some(Outcome::ExitDone | Outcome::TryInRem | Outcome::RecoverInRem)) {
            self.out.attempts_completed += 1;
        }
        self.cfg = post;
        self.out.configs += 1;
        let stop = !bad.is_empty();
        for v in bad {
            self.out.violations.push(v.with_trace(self.path.iter().copied()));
        }
        Ok(!stop)
    }

    fn drained(&self) -> bool {
        self.cfg.procs.iter().all(|ps| !ps.is_active())
    }

    fn execute(mut self) -> Result<Outcomes, ExploreError> {
        let mut live = true;
        while live && self.path.len() < self.params.max_depth {
            match self.choose(false) {
                Some(a) => live = self.apply(a)?,
                None => break,
            }
        }
        // no new attempts, crashes or aborts: let every open attempt finish
        let drain_limit = self.path.len() as u64 + self.drain_budget();
        while live && !self.drained() && self.now() < drain_limit {
            match self.choose(true) {
                Some(a) => live = self.apply(a)?,
                None => break,
            }
        }
        if live {
            if let Some(progress) = &self.progress {
                for v in progress.finish() {
                    self.out.violations.push(v.with_trace(self.path.iter().copied()));
                }
            }
        }
        self.out.len = self.path.len();
        for acc in &self.accountants {
            let mut h = Histogram::new(acc.model());
            for ps in acc.finish().iter().filter(|ps| ps.end != PassageEnd::Open) {
                h.add(ps.rmr);
            }
            self.out.rmr.push(h);
        }
        self.out.final_hash = self.cfg.state_hash();
        Ok(self.out)
    }

    fn drain_budget(&self) -> u64 {
        match &self.progress {
            Some(p) => p.limit() + 1,
            None => ProgressParams::new(self.params.crash_budget).action_limit(self.params.n),
        }
    }
}

fn run_schedule(params: &ExploreParams, seed: u64, index: u64, fair: bool) -> Result<Outcomes, ExploreError> {
    let model = params.model();
    let cfg = model.initial_config()?;
    let n = params.n;
    let mut violations = Vec::new();
    if index == 0 {
        violations.extend(check_invariant(&cfg));
    }
    let run = Run {
        params,
        model,
        fair,
        rng: ChaCha8Rng::seed_from_u64(schedule_seed(seed, index)),
        cfg,
        monitor: Monitor::new(n),
        progress: fair.then(|| Progress::new(n, ProgressParams::new(params.crash_budget))),
        accountants: if params.rmr { MemoryModel::ALL.iter().map(|&m| Accountant::new(n, m)).collect() } else { Vec::new() },
        budget: vec![Budget::default(); n],
        last_run: vec![0; n],
        path: Vec::new(),
        out: Outcomes { violations, configs: 0, len: 0, attempts_completed: 0, rmr: Vec::new(), final_hash: 0 },
    };
    run.execute()
}

/// Run `params.schedules` independent seeded schedules in parallel.
///
/// Each schedule runs for `max_depth` actions with crash and abort
/// injection, then drains: no new attempts, crashes or abort signals until
/// every open attempt has finished. Under `FairRandom` every process
/// outside the remainder (or with a pending recovery) is scheduled at least
/// once every `4n` actions and the progress budget is enforced.
pub fn explore_random(params: &ExploreParams) -> Result<Report, ExploreError> {
    let (seed, fair) = match params.scheduler {
        Scheduler::Random { seed } => (seed, false),
        Scheduler::FairRandom { seed } => (seed, true),
        Scheduler::Exhaustive => return Err(ExploreError::WrongScheduler(params.scheduler)),
    };
    initial_check(params)?;
    let start = Instant::now();
    let mut report = Report::default();
    if params.rmr {
        report.rmr = MemoryModel::ALL.iter().map(|&m| Histogram::new(m)).collect();
    }
    let mut digest = FnvHasher::default();
    let mut first = 0;
    while first < params.schedules {
        let last = (first + CHUNK).min(params.schedules);
        let chunk: Vec<Result<Outcomes, ExploreError>> =
            (first..last).into_par_iter().map(|i| run_schedule(params, seed, i, fair)).collect();
        for r in chunk {
            let o = r?;
            if params.stop_on_violation && !report.is_clean() {
                break;
            }
            report.schedules += 1;
            report.states_visited += o.configs;
            report.transitions += o.configs;
            report.max_frontier = report.max_frontier.max(o.len);
            report.attempts_completed += o.attempts_completed;
            for v in o.violations {
                report.record(v);
            }
            for (acc, h) in report.rmr.iter_mut().zip(&o.rmr) {
                acc.merge(h);
            }
            digest.write_u64(o.final_hash);
        }
        first = last;
        if params.stop_on_violation && !report.is_clean() {
            break;
        }
    }
    report.trace_digest = format!("{:016x}", digest.finish());
    report.wall_time = start.elapsed();
    Ok(report)
}

fn initial_check(params: &ExploreParams) -> Result<(), ExploreError> {
    if params.n == 0 {
        return Err(ModelError::NoProcesses.into());
    }
    for (name, r) in [("crash", params.crash_rate), ("abort", params.abort_rate), ("recover", params.recover_rate)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(ExploreError::Guard(format!("{name} rate {r} is not a probability")));
        }
    }
    Ok(())
}
