//! Hand-counted RMR oracles and constructed schedules. Shared by the RMR
//! tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rme_core::model::{Action, Caller, Configuration, LineId, Method, Model, PLine, Status, StepEffect};
use rme_core::rmr::{attempts, Accountant, MemoryModel, PassageEnd};
use rme_core::Pid;

fn p(i: u32) -> Pid {
    Pid::new(i)
}

/// Heap layout worked out by hand: root 0, children 2i+1 and 2i+2, leaves
/// padded to a power of two. A node is homed with the first process below
/// it; padding belongs to the last process.
pub struct HandTree {
    pub n: usize,
    pub cap: usize,
}

impl HandTree {
    pub fn new(n: usize) -> Self {
        HandTree { n, cap: n.next_power_of_two() }
    }

    pub fn home(&self, mut i: usize) -> usize {
        while i < self.cap - 1 {
            i = 2 * i + 1;
        }
        (i - (self.cap - 1)).min(self.n - 1)
    }

    /// Remote references of one solo propagating write by process `q`
    /// (0-based): the leaf check, write and settle are local; every ancestor
    /// is refreshed twice by reading itself and both children, then CAS.
    pub fn write_cost(&self, q: usize) -> u64 {
        let remote = |i: usize| u64::from(self.home(i) != q);
        let mut at = self.cap - 1 + q;
        let mut cost = 0;
        while at > 0 {
            at = (at - 1) / 2;
            cost += 2 * (2 * remote(at) + remote(2 * at + 1) + remote(2 * at + 2));
        }
        cost
    }

    /// Solo try + exit passage on DSM. Besides the two writes, the passage
    /// touches process 1's memory 11 times: T1, T2, the promote at T5
    /// (P1, P2, P3, P5), E2, E3, E4 and the promote at E5 (P1, P2). Its own
    /// go flag is local.
    pub fn solo_passage(&self, q: usize) -> u64 {
        let globals = if q == 0 { 0 } else { 11 };
        globals + 2 * self.write_cost(q)
    }
}

pub fn solo_passage_cost(n: usize, q: Pid, model: MemoryModel) -> (u64, Vec<(LineId, StepEffect)>) {
    let m = Model::new(n);
    let mut cfg = m.initial_config().unwrap();
    let mut acc = Accountant::new(n, model);
    let mut steps = Vec::new();
    let mut a = Action::Invoke(q, Method::Try);
    loop {
        let line = cfg.proc(q).pc;
        let (next, fx) = m.step(&cfg, a).unwrap();
        acc.observe(&cfg, &fx, &next).unwrap();
        steps.push((line, fx));
        cfg = next;
        if cfg.proc(q).pc == LineId::Rem {
            break;
        }
        a = Action::Step(q);
    }
    let done = acc.finish();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].end, PassageEnd::Remainder);
    assert!(done[0].entered_cs);
    (done[0].rmr, steps)
}

/// `waiters` promoters paused at P6 all aiming at p2, which spins at T6.
/// Process 1 exits and installs p2; p3 onwards arrive afterwards and find
/// p2 owning the CS.
pub type StepLog = Vec<(Configuration, StepEffect, Configuration)>;

pub fn crowd_at_p6(waiters: usize) -> (Model, Configuration, Vec<Pid>, StepLog) {
    let n = waiters + 1;
    let model = Model::new(n);
    let mut cfg = model.initial_config().unwrap();
    let mut log = Vec::new();
    let mut go = |cfg: &mut Configuration, a: Action| {
        let (next, fx) = model.step(cfg, a).unwrap();
        log.push((cfg.clone(), fx, next.clone()));
        *cfg = next;
    };
    let run_to = |cfg: &mut Configuration, q: Pid, line: LineId, go: &mut dyn FnMut(&mut Configuration, Action)| {
        for _ in 0..200 {
            if cfg.proc(q).pc == line {
                return;
            }
            go(cfg, Action::Step(q));
        }
        panic!("{q} stuck at {}", cfg.proc(q).pc);
    };
    go(&mut cfg, Action::Invoke(p(1), Method::Try));
    run_to(&mut cfg, p(1), LineId::Cs, &mut go);
    go(&mut cfg, Action::Invoke(p(2), Method::Try));
    run_to(&mut cfg, p(2), LineId::T6, &mut go);
    let p6 = |c: Caller| LineId::P(c, PLine::P6);
    run_to(&mut cfg, p(1), p6(Caller::E5), &mut go);
    let mut crowd = vec![p(1)];
    for i in 3..=n as u32 {
        go(&mut cfg, Action::Invoke(p(i), Method::Try));
        run_to(&mut cfg, p(i), p6(Caller::T5), &mut go);
        crowd.push(p(i));
    }
    (model, cfg, crowd, log)
}

pub struct Tally {
    pub acc: Vec<Accountant>,
}

impl Tally {
    pub fn new(n: usize, log: &[(Configuration, StepEffect, Configuration)]) -> Self {
        let mut acc: Vec<Accountant> = MemoryModel::ALL.iter().map(|&m| Accountant::new(n, m)).collect();
        for (pre, fx, post) in log {
            for a in &mut acc {
                a.observe(pre, fx, post).unwrap();
            }
        }
        Tally { acc }
    }

    pub fn step(&mut self, model: &Model, cfg: &mut Configuration, a: Action) -> (StepEffect, Vec<Vec<bool>>) {
        let (next, fx) = model.step(cfg, a).unwrap();
        let flags = self.acc.iter_mut().map(|acc| acc.observe(cfg, &fx, &next).unwrap()).collect();
        *cfg = next;
        (fx, flags)
    }

    pub fn get(&self, m: MemoryModel) -> &Accountant {
        self.acc.iter().find(|a| a.model() == m).unwrap()
    }
}

pub const STRICT: usize = 1;
pub const RELAXED: usize = 2;

/// Random schedule with crashes and abort signals, then a drain in which
/// only recoveries and steps run until everyone is back in the remainder.
pub fn random_dsm_attempts(n: usize, seed: u64, len: usize, crash: f64, abort: f64) -> Vec<(u64, u64, bool)> {
    let model = Model::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = model.initial_config().unwrap();
    let mut acc = Accountant::new(n, MemoryModel::Dsm);
    let mut take = |cfg: &mut Configuration, a: Action| {
        let (next, fx) = model.step(cfg, a).unwrap();
        acc.observe(cfg, &fx, &next).unwrap();
        *cfg = next;
    };
    for _ in 0..len {
        let all = model.all_enabled(&cfg);
        let pick = |f: &dyn Fn(&Action) -> bool| all.iter().copied().filter(|a| f(a)).collect::<Vec<_>>();
        let crashes = pick(&|a| matches!(a, Action::Crash(_)));
        let aborts = pick(&|a| matches!(a, Action::SetAbort(_) | Action::ClearAbort(_)));
        let normal = pick(&|a| matches!(a, Action::Step(_) | Action::Invoke(..)));
        let set = if !crashes.is_empty() && rng.gen_bool(crash) {
            crashes
        } else if !aborts.is_empty() && rng.gen_bool(abort) {
            aborts
        } else {
            normal
        };
        let a = set[rng.gen_range(0..set.len())];
        take(&mut cfg, a);
    }
    for round in 0..100_000 {
        // round-robin so a spinning waiter cannot starve the process it waits on
        let next = Pid::all(n).cycle().skip(round % n).take(n).find_map(|q| {
            let ps = cfg.proc(q);
            if ps.pc != LineId::Rem {
                Some(Action::Step(q))
            } else if ps.status != Status::Good {
                Some(Action::Invoke(q, Method::Recover))
            } else {
                None
            }
        });
        match next {
            Some(a) => take(&mut cfg, a),
            None => break,
        }
    }
    attempts(&acc.finish()).into_iter().map(|a| (a.rmr, a.crashes, a.complete)).collect()
}

