use rme_core::checker::bounds;
use rme_core::model::{CsOwner, Status, StepEffect};
use rme_core::registry::Pair;
use rme_core::Pid;
use rme_native::{CrashPlan, CrashPoint, Lock, LockError, Outcome, Session, SessionError};

fn pid(i: u32) -> Pid {
    Pid::new(i)
}

fn cost(fx: &[StepEffect]) -> u64 {
    fx.iter().map(StepEffect::cost).sum()
}

/// The lock is quiescent: free, nobody announced, nobody promoted.
fn assert_idle(lock: &Lock) {
    let mem = lock.snapshot();
    assert!(matches!(mem.csowner, CsOwner::Free(_)), "{:?}", mem.csowner);
    assert!(mem.go.iter().all(|&g| g == -1), "{:?}", mem.go);
    for p in Pid::all(lock.n()) {
        assert_eq!(mem.registry.get(p), Pair::empty(p));
        assert_eq!(lock.status(p), Status::Good);
    }
}

/// Another process can still get in. The abort flag turns a would-be
/// deadlock into an IN_REM answer instead of a hang.
fn assert_enterable(s: &mut Session<'_>) {
    s.lock().set_abort(s.pid(), true).unwrap();
    let r = s.try_lock().unwrap();
    s.lock().set_abort(s.pid(), false).unwrap();
    assert_eq!(r, Outcome::InCs, "p{} could not enter", s.pid());
    s.exit().unwrap();
}

#[test]
fn construction_and_sessions() {
    assert!(matches!(Lock::new(0), Err(LockError::Size(0))));
    let lock = Lock::new(3).unwrap();
    assert!(matches!(lock.session(pid(4)), Err(LockError::NoSuchPid(_))));
    let s = lock.session(pid(2)).unwrap();
    assert!(matches!(lock.session(pid(2)), Err(LockError::InUse(_))));
    drop(s);
    let mut s = lock.session(pid(2)).unwrap();
    assert!(matches!(s.exit(), Err(SessionError::OutOfOrder { .. })));
    assert!(matches!(s.crash(), Err(SessionError::OutOfOrder { .. })));
    assert_idle(&lock);
}

#[test]
fn solo_fast_path() {
    for n in [1, 2, 5, 16] {
        let lock = Lock::new(n).unwrap();
        let mut s = lock.session(Pid::new(n as u32)).unwrap();
        for round in 0..3 {
            assert_eq!(s.try_lock().unwrap(), Outcome::InCs);
            assert!(s.in_cs());
            assert_eq!(lock.go(s.pid()), 0);
            assert_eq!(lock.csowner(), CsOwner::Owned(s.pid()));
            assert!(matches!(s.try_lock(), Err(SessionError::OutOfOrder { .. })));
            s.exit().unwrap();
            assert_eq!(lock.go(s.pid()), -1);
            assert_eq!(lock.snapshot().token, 2 + round);
            assert_idle(&lock);
        }
    }
}

#[test]
fn abort_while_waiting_returns_to_remainder() {
    let lock = Lock::new(4).unwrap();
    let mut a = lock.session(pid(1)).unwrap();
    let mut b = lock.session(pid(3)).unwrap();
    assert_eq!(a.try_lock().unwrap(), Outcome::InCs);
    lock.set_abort(pid(3), true).unwrap();
    assert_eq!(b.try_lock().unwrap(), Outcome::InRem);
    lock.set_abort(pid(3), false).unwrap();
    let mem = lock.snapshot();
    assert_eq!(mem.registry.get(pid(3)), Pair::empty(pid(3)));
    assert_eq!(mem.go(pid(3)), -1);
    assert_eq!(lock.csowner(), CsOwner::Owned(pid(1)));
    a.exit().unwrap();
    assert_idle(&lock);
    assert_enterable(&mut b);
}

#[test]
fn abort_after_being_installed_enters() {
    // b is announced, a's exit installs b as owner but crashes before
    // releasing it; b's abort then finds itself owner at A3.
    let lock = Lock::new(2).unwrap();
    let mut a = lock.session(pid(1)).unwrap();
    let mut b = lock.session(pid(2)).unwrap();
    assert_eq!(a.try_lock().unwrap(), Outcome::InCs);
    b.set_crash_plan(CrashPlan::At(CrashPoint::before("T6".parse().unwrap())));
    assert!(matches!(b.try_lock(), Err(SessionError::Crashed(_))));
    a.set_crash_plan(CrashPlan::At(CrashPoint::before("E5::P4".parse().unwrap())));
    assert!(a.exit().is_err());
    assert_eq!(lock.csowner(), CsOwner::Owned(pid(2)));
    lock.set_abort(pid(2), true).unwrap();
    assert_eq!(b.recover().unwrap(), Outcome::InCs);
    lock.set_abort(pid(2), false).unwrap();
    b.exit().unwrap();
    // the lock is free again, so a's abort path may promote itself
    if a.recover().unwrap() == Outcome::InCs {
        a.exit().unwrap();
    }
    assert_idle(&lock);
}

#[test]
fn recover_with_good_status_is_cheap() {
    for n in [1, 4, 32] {
        let lock = Lock::new(n).unwrap();
        let mut s = lock.session(pid(1)).unwrap();
        s.record(true);
        assert_eq!(s.recover().unwrap(), Outcome::InRem);
        let fx = s.take_effects();
        assert!(cost(&fx) <= bounds(n).b_fast_rem, "{fx:?}");
        assert_eq!(s.ops(), 1);
    }
}

#[test]
fn crash_in_exit_recovers_within_bound() {
    for n in [2, 3, 9] {
        let lock = Lock::new(n).unwrap();
        let mut s = lock.session(pid(2)).unwrap();
        s.try_lock().unwrap();
        s.set_crash_plan(CrashPlan::At(CrashPoint::before("E3".parse().unwrap())));
        assert!(matches!(s.exit(), Err(SessionError::Crashed(p)) if p.to_string() == "E3"));
        assert_eq!(s.status(), Status::RecExit);
        s.record(true);
        let r = s.recover().unwrap();
        let fx = s.take_effects();
        assert!(cost(&fx) <= bounds(n).b_rec_exit, "{} > {}", cost(&fx), bounds(n).b_rec_exit);
        if r == Outcome::InCs {
            s.exit().unwrap();
        }
        assert_idle(&lock);
        assert_enterable(&mut s);
        let mut other = lock.session(pid(1)).unwrap();
        assert_enterable(&mut other);
    }
}

#[test]
fn crash_in_cs_recovers_into_cs() {
    let lock = Lock::new(3).unwrap();
    let mut s = lock.session(pid(3)).unwrap();
    let mut t = lock.session(pid(1)).unwrap();
    s.try_lock().unwrap();
    assert!(matches!(s.crash(), Err(SessionError::Crashed(_))));
    assert_eq!(s.status(), Status::RecCs);
    // nobody else may take over while the owner is down
    lock.set_abort(pid(1), true).unwrap();
    assert_eq!(t.try_lock().unwrap(), Outcome::InRem);
    lock.set_abort(pid(1), false).unwrap();
    s.record(true);
    assert_eq!(s.recover().unwrap(), Outcome::InCs);
    assert!(cost(&s.take_effects()) <= bounds(3).b_rec_cs);
    s.exit().unwrap();
    assert_idle(&lock);
    assert_enterable(&mut t);
}

#[test]
fn dropping_a_session_in_cs_counts_as_a_crash() {
    let lock = Lock::new(2).unwrap();
    {
        let mut s = lock.session(pid(1)).unwrap();
        s.try_lock().unwrap();
    }
    assert_eq!(lock.status(pid(1)), Status::RecCs);
    let mut s = lock.session(pid(1)).unwrap();
    assert_eq!(s.recover().unwrap(), Outcome::InCs);
    s.exit().unwrap();
    assert_idle(&lock);
}

/// Drive the scenario, crashing at the `k`th crash point p2 reaches. Returns
/// where it crashed, or `None` if the scenario has fewer points.
fn crash_scenario(scenario: usize, k: u64) -> Option<CrashPoint> {
    let lock = Lock::new(3).unwrap();
    let mut p1 = lock.session(pid(1)).unwrap();
    let mut p2 = lock.session(pid(2)).unwrap();
    let mut p3 = lock.session(pid(3)).unwrap();
    let crashed = |r: Result<(), SessionError>| match r {
        Ok(()) => None,
        Err(SessionError::Crashed(at)) => Some(at),
        Err(e) => panic!("{e}"),
    };
    let hit = match scenario {
        // solo passage
        0 => {
            p2.set_crash_plan(CrashPlan::After(k));
            crashed(p2.try_lock().map(|_| ()).and_then(|_| p2.exit()))
        }
        // abort while p1 holds the lock
        1 => {
            p1.try_lock().unwrap();
            lock.set_abort(pid(2), true).unwrap();
            p2.set_crash_plan(CrashPlan::After(k));
            let hit = crashed(p2.try_lock().map(|o| assert_eq!(o, Outcome::InRem)));
            lock.set_abort(pid(2), false).unwrap();
            p1.exit().unwrap();
            hit
        }
        // exit that hands the lock to a waiting p3
        2 => {
            p2.try_lock().unwrap();
            p3.set_crash_plan(CrashPlan::At(CrashPoint::before("T6".parse().unwrap())));
            assert!(p3.try_lock().is_err());
            p2.set_crash_plan(CrashPlan::After(k));
            let hit = crashed(p2.exit());
            // p3 gets in unless p2 still owns the lock
            if p3.recover().unwrap() == Outcome::InCs {
                p3.exit().unwrap();
            }
            hit
        }
        // recovery from a crash in the critical section
        _ => {
            p2.try_lock().unwrap();
            p2.crash().unwrap_err();
            p2.set_crash_plan(CrashPlan::After(k));
            crashed(p2.recover().map(|o| assert_eq!(o, Outcome::InCs)).and_then(|_| p2.exit()))
        }
    };
    p2.set_crash_plan(CrashPlan::Never);
    if hit.is_some() {
        while p2.status() != Status::Good {
            if p2.recover().unwrap() == Outcome::InCs {
                p2.exit().unwrap();
            }
        }
    }
    assert_idle(&lock);
    for s in [&mut p1, &mut p2, &mut p3] {
        assert_enterable(s);
    }
    hit
}

#[test]
fn every_crash_point_is_recoverable() {
    for scenario in 0..4 {
        let mut points = Vec::new();
        for k in 0.. {
            match crash_scenario(scenario, k) {
                Some(at) => points.push(at),
                None => break,
            }
        }
        assert!(points.len() > 20, "scenario {scenario}: {points:?}");
        assert!(points.iter().any(|p| p.sub > 0), "scenario {scenario} has no registry sub-points");
    }
}
