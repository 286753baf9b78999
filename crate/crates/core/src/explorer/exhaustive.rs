use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use fnv::{FnvHashMap, FnvHasher};

use crate::checker::{check_invariant, Monitor, Violation, ViolationKind};
use crate::model::{Action, Configuration, Method, Model, ModelError, StepEffect, Status};

use super::{ExploreError, ExploreParams, Report, Scheduler, EXHAUSTIVE_MAX_N};

/// One explored transition, handed to an observer.
pub struct Visit<'a> {
    pub pre: &'a Configuration,
    pub action: Action,
    pub effect: &'a StepEffect,
    pub post: &'a Configuration,
    /// Actions from the initial configuration, ending with `action`.
    pub path: &'a [Action],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Used {
    crashes: u8,
    aborts: u8,
    attempts: u8,
}

#[derive(Clone)]
struct State {
    cfg: Configuration,
    monitor: Monitor,
    used: Vec<Used>,
}

impl State {
    fn key(&self) -> u64 {
        let mut h = FnvHasher::default();
        self.cfg.state_hash().hash(&mut h);
        self.monitor.hash(&mut h);
        self.used.hash(&mut h);
        h.finish()
    }
}

fn allowed(params: &ExploreParams, st: &State, a: Action) -> bool {
    let u = st.used[a.actor().index()];
    match a {
        Action::Crash(_) => (u.crashes as u32) < params.crash_budget,
        Action::SetAbort(_) => (u.aborts as u32) < params.abort_budget,
        Action::Invoke(p, _) if st.cfg.proc(p).status == Status::Good => {
            params.attempt_limit.is_none_or(|l| (u.attempts as u32) < l)
        }
        _ => true,
    }
}

fn charge(used: &mut Used, a: Action, cfg: &Configuration) {
    match a {
        Action::Crash(_) => used.crashes += 1,
        Action::SetAbort(_) => used.aborts += 1,
        Action::Invoke(p, Method::Try | Method::Recover) if cfg.proc(p).status == Status::Good => {
            used.attempts = used.attempts.saturating_add(1)
        }
        _ => {}
    }
}

fn guard(params: &ExploreParams) -> Result<(), ExploreError> {
    if params.scheduler != Scheduler::Exhaustive {
        return Err(ExploreError::WrongScheduler(params.scheduler));
    }
    if params.n == 0 || params.n > EXHAUSTIVE_MAX_N {
        return Err(ExploreError::Guard(format!("n = {} outside 1..={EXHAUSTIVE_MAX_N}", params.n)));
    }
    if params.max_depth > params.depth_ceiling {
        return Err(ExploreError::Guard(format!(
            "depth {} exceeds the ceiling of {}",
            params.max_depth, params.depth_ceiling
        )));
    }
    if params.crash_budget > 255 || params.abort_budget > 255 {
        return Err(ExploreError::Guard("budgets above 255 are not supported".into()));
    }
    Ok(())
}

/// Outcome of one transition: the successor, or the violations it exposed.
enum Expanded {
    Next(State, StepEffect),
    Bad(StepEffect, State, Vec<Violation>),
    Poison(Violation),
}

fn expand(model: &Model, st: &State, a: Action) -> Result<Expanded, ExploreError> {
    let (cfg, fx) = match model.step(&st.cfg, a) {
        Ok(r) => r,
        Err(ModelError::PoisonRead { pid, line, register }) => {
            let detail = format!("p={pid} read `{register}` at {line}");
            return Ok(Expanded::Poison(Violation::new(ViolationKind::PoisonRead, detail)));
        }
        Err(e) => return Err(e.into()),
    };
    let mut monitor = st.monitor.clone();
    let mut bad = monitor.observe(&st.cfg, a, &fx, &cfg);
    bad.extend(check_invariant(&cfg));
    let mut used = st.used.clone();
    charge(&mut used[a.actor().index()], a, &st.cfg);
    let next = State { cfg, monitor, used };
    Ok(if bad.is_empty() { Expanded::Next(next, fx) } else { Expanded::Bad(fx, next, bad) })
}

struct Dfs<'a, F> {
    params: &'a ExploreParams,
    model: Model,
    visited: FnvHashMap<u64, u32>,
    path: Vec<crate::model::Action>,
    report: Report,
    observer: F,
}

impl<F: FnMut(&Visit)> Dfs<'_, F> {
    fn run(&mut self, st: &State) -> Result<(), ExploreError> {
        let depth = self.path.len();
        self.report.max_frontier = self.report.max_frontier.max(depth);
        if depth >= self.params.max_depth {
            return Ok(());
        }
        let remaining = (self.params.max_depth - depth - 1) as u32;
        for a in self.model.all_enabled(&st.cfg) {
            if self.params.stop_on_violation && !self.report.is_clean() {
                return Ok(());
            }
            if !allowed(self.params, st, a) {
                continue;
            }
            self.report.transitions += 1;
            self.path.push(a);
            match expand(&self.model, st, a)? {
                Expanded::Poison(v) => self.report.record(v.with_trace(self.path.iter().copied())),
                Expanded::Bad(fx, next, vs) => {
                    (self.observer)(&Visit { pre: &st.cfg, action: a, effect: &fx, post: &next.cfg, path: &self.path });
                    for v in vs {
                        self.report.record(v.with_trace(self.path.iter().copied()));
                    }
                }
                Expanded::Next(next, fx) => {
                    (self.observer)(&Visit { pre: &st.cfg, action: a, effect: &fx, post: &next.cfg, path: &self.path });
                    let key = next.key();
                    let seen = self.visited.get(&key).copied();
                    if seen.is_none_or(|r| r < remaining) {
                        if seen.is_none() {
                            self.report.states_visited += 1;
                        }
                        self.visited.insert(key, remaining);
                        self.run(&next)?;
                    }
                }
            }
            self.path.pop();
        }
        Ok(())
    }
}

fn initial_state(params: &ExploreParams) -> Result<(Model, State), ExploreError> {
    let model = params.model();
    let cfg = model.initial_config()?;
    let st = State { monitor: Monitor::new(params.n), used: vec![Used::default(); params.n], cfg };
    Ok((model, st))
}

/// Depth-first enumeration of every interleaving up to `max_depth`
/// actions, including both remainder choices, crashes and abort signals
/// within budget. Every reached configuration is checked against the
/// invariant and the run monitors; a state reached again with no more
/// remaining depth than before is not re-expanded.
pub fn explore_exhaustive(params: &ExploreParams) -> Result<Report, ExploreError> {
    explore_exhaustive_with(params, |_| {})
}

/// As [`explore_exhaustive`], calling `observer` on every transition taken.
pub fn explore_exhaustive_with(params: &ExploreParams, observer: impl FnMut(&Visit)) -> Result<Report, ExploreError> {
    guard(params)?;
    let start = Instant::now();
    let (model, st) = initial_state(params)?;
    let mut dfs = Dfs {
        params,
        model,
        visited: FnvHashMap::default(),
        path: Vec::new(),
        report: Report::default(),
        observer,
    };
    for v in check_invariant(&st.cfg) {
        dfs.report.record(v);
    }
    dfs.visited.insert(st.key(), params.max_depth as u32);
    dfs.report.states_visited = 1;
    dfs.run(&st)?;
    let mut report = dfs.report;
    report.schedules = 1;
    report.trace_digest = format!("{:016x}", report.states_visited ^ report.transitions.rotate_left(32));
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Breadth-first search for a violation with the fewest actions, under the
/// same rules as [`explore_exhaustive`]. Returns the violation and the
/// number of distinct states examined.
pub fn shortest_violation(params: &ExploreParams) -> Result<(Option<Violation>, u64), ExploreError> {
    guard(params)?;
    let (model, st) = initial_state(params)?;
    if let Some(v) = check_invariant(&st.cfg).into_iter().next() {
        return Ok((Some(v), 1));
    }
    // arena of (parent, action) so traces are rebuilt only on success
    let mut arena: Vec<(usize, Option<Action>)> = vec![(0, None)];
    let mut seen: FnvHashMap<u64, ()> = FnvHashMap::default();
    seen.insert(st.key(), ());
    let mut frontier = VecDeque::from([(st, 0usize, 0usize)]);
    let trace = |arena: &Vec<(usize, Option<Action>)>, mut at: usize| {
        let mut out = Vec::new();
        while let (parent, Some(a)) = arena[at] {
            out.push(a);
            at = parent;
        }
        out.reverse();
        out
    };
    while let Some((state, node, depth)) = frontier.pop_front() {
        if depth >= params.max_depth {
            continue;
        }
        for a in model.all_enabled(&state.cfg) {
            if !allowed(params, &state, a) {
                continue;
            }
            arena.push((node, Some(a)));
            let id = arena.len() - 1;
            match expand(&model, &state, a)? {
                Expanded::Poison(v) => return Ok((Some(v.with_trace(trace(&arena, id))), seen.len() as u64)),
                Expanded::Bad(_, _, vs) => {
                    let v = vs.into_iter().next().expect("non-empty");
                    return Ok((Some(v.with_trace(trace(&arena, id))), seen.len() as u64));
                }
                Expanded::Next(next, _) => {
                    if seen.insert(next.key(), ()).is_none() {
                        frontier.push_back((next, id, depth + 1));
                    } else {
                        arena.pop();
                    }
                }
            }
        }
    }
    Ok((None, seen.len() as u64))
}
