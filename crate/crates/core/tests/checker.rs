use rme_core::checker::{
    bounds, check_invariant, failing_conditions, monitor_trace, Bounds, Monitor, MonitorParams, Progress,
    ProgressParams, ViolationKind,
};
use rme_core::model::{initial_config, AbortFrom, Action, Configuration, CsOwner, LineId, Method, Model, Reg, Status};
use rme_core::registry::{Pair, TreeShape};
use rme_core::Pid;

fn p(i: u32) -> Pid {
    Pid::new(i)
}

fn step_to(model: &Model, mut cfg: Configuration, q: Pid, line: LineId) -> Configuration {
    for _ in 0..60 {
        if cfg.proc(q).pc == line {
            return cfg;
        }
        cfg = model.step(&cfg, Action::Step(q)).unwrap().0;
    }
    panic!("p={q} never reached {line}");
}

fn kinds(cfg: &Configuration) -> Vec<ViolationKind> {
    check_invariant(cfg).into_iter().map(|v| v.kind).collect()
}

#[test]
fn initial_configurations_satisfy_every_condition() {
    for n in [1, 2, 3, 8] {
        let cfg = initial_config(n).unwrap();
        assert!(check_invariant(&cfg).is_empty(), "n={n}");
        assert_eq!(failing_conditions(&cfg), 0);
    }
}

#[test]
fn corrupted_shared_state_is_caught() {
    let mut cfg = initial_config(2).unwrap();
    cfg.shared.token = 0;
    assert!(kinds(&cfg).contains(&ViolationKind::Cond(1)));

    let mut cfg = initial_config(2).unwrap();
    cfg.shared.seq = 3;
    assert!(kinds(&cfg).contains(&ViolationKind::Cond(2)));
    assert_ne!(failing_conditions(&cfg) & (1 << 1), 0);

    let mut cfg = initial_config(2).unwrap();
    cfg.shared.go[1] = 0;
    assert!(kinds(&cfg).contains(&ViolationKind::Cond(5)));

    let mut cfg = initial_config(2).unwrap();
    cfg.shared.registry.set(p(1), Pair::finite(p(1), 1));
    assert!(!kinds(&cfg).is_empty(), "a registered process must be trying");
}

#[test]
fn two_processes_in_cs_is_a_mutex_violation() {
    let model = Model::new(2);
    let cfg = model.step(&model.initial_config().unwrap(), Action::Invoke(p(1), Method::Try)).unwrap().0;
    let mut cfg = step_to(&model, cfg, p(1), LineId::Cs);
    cfg.proc_mut(p(2)).pc = LineId::Cs;
    assert!(kinds(&cfg).contains(&ViolationKind::Mutex));
    assert_ne!(failing_conditions(&cfg) & (1 << 13), 0);
}

#[test]
fn recorded_trace_of_a_clean_run_has_no_violations() {
    let model = Model::new(2);
    let mut actions = vec![Action::Invoke(p(1), Method::Try)];
    let mut cfg = model.step(&model.initial_config().unwrap(), actions[0]).unwrap().0;
    // p2 joins early, both interleave until p1 is done
    let mut script = vec![Action::Step(p(1)); 5];
    script.push(Action::Invoke(p(2), Method::Try));
    script.extend([Action::Step(p(2)); 4]);
    for a in script {
        cfg = model.step(&cfg, a).unwrap().0;
        actions.push(a);
    }
    for _ in 0..200 {
        let enabled: Vec<Action> =
            model.all_enabled(&cfg).into_iter().filter(|a| matches!(a, Action::Step(_))).collect();
        let Some(&a) = enabled.first() else { break };
        cfg = model.step(&cfg, a).unwrap().0;
        actions.push(a);
    }
    let vs = monitor_trace(&model, &actions, MonitorParams::default()).unwrap();
    assert!(vs.is_empty(), "{vs:?}");
}

#[test]
fn bounds_match_path_counts() {
    for n in [1usize, 2, 3, 4, 8, 16, 100] {
        let w = 3 + 8 * TreeShape::new(n).levels() as u64;
        let b = bounds(n);
        // exit: invoke, E1 write, E2..E5, P1..P6, E6
        assert_eq!(b.b_exit, 1 + w + 4 + 6 + 1);
        // recover from REC_CS: invoke, REC1, REC2, A1 write, A2, P1 P4 P5 P6, A3
        assert_eq!(b.b_rec_cs, 3 + w + 1 + 4 + 1);
        // recover otherwise: invoke, REC1, REC2, A1 write, A2, P1..P6, A3..A5
        assert_eq!(b.b_rec_exit, 3 + w + 1 + 6 + 3);
        assert_eq!(b.b_rec_rem, b.b_rec_exit);
        assert_eq!(b.b_fast_rem, 2);
        // abort: T1..T3, T4 write, T5, P1..P6, two T6 reads, T7, T8, A1 write, A2, P1..P6, A3..A5
        assert_eq!(b.b_abort, 3 + w + 1 + 6 + 2 + 2 + w + 1 + 6 + 3);
    }
}

fn observe_all(model: &Model, monitor: &mut Monitor, cfg: &mut Configuration, actions: &[Action]) -> Vec<ViolationKind> {
    let mut out = Vec::new();
    for &a in actions {
        let (next, fx) = model.step(cfg, a).unwrap();
        out.extend(monitor.observe(cfg, a, &fx, &next).into_iter().map(|v| v.kind));
        *cfg = next;
    }
    out
}

#[test]
fn exit_longer_than_budget_is_flagged() {
    let model = Model::new(1);
    let tight = Bounds { b_exit: 3, ..bounds(1) };
    let mut monitor = Monitor::with_bounds(1, tight);
    let mut cfg = model.initial_config().unwrap();
    let mut found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::Rem {
        found.extend(observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]));
    }
    assert_eq!(found, vec![ViolationKind::BoundedExit]);

    let mut monitor = Monitor::new(1);
    let mut cfg = model.initial_config().unwrap();
    let mut found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::Rem {
        found.extend(observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]));
    }
    assert!(found.is_empty());
}

#[test]
fn entering_the_cs_while_a_crashed_owner_is_out_is_a_csr_violation() {
    let model = Model::new(2);
    let mut monitor = Monitor::new(2);
    let mut cfg = model.initial_config().unwrap();
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::Cs {
        observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]);
    }
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Crash(p(1)), Action::Invoke(p(2), Method::Try)]);
    // force p2 to the point of entry as a broken lock would
    let ps = cfg.proc_mut(p(2));
    ps.pc = LineId::T7;
    ps.tok = Reg::Val(2);
    cfg.shared.go[1] = 0;
    let found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(2))]);
    assert!(found.contains(&ViolationKind::Csr), "{found:?}");
}

#[test]
fn overtaking_a_completed_doorway_is_an_fcfs_violation() {
    let model = Model::new(2);
    let mut monitor = Monitor::new(2);
    let mut cfg = model.initial_config().unwrap();
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::T5 {
        observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]);
    }
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(2), Method::Try)]);
    let ps = cfg.proc_mut(p(2));
    ps.pc = LineId::T7;
    ps.tok = Reg::Val(2);
    cfg.shared.go[1] = 0;
    let found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(2))]);
    assert!(found.contains(&ViolationKind::Fcfs), "{found:?}");
}

#[test]
fn doorway_started_before_completion_is_not_ordered() {
    let model = Model::new(2);
    let mut monitor = Monitor::new(2);
    let mut cfg = model.initial_config().unwrap();
    // p2 starts its attempt before p1 finishes T4
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try), Action::Invoke(p(2), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::T5 {
        observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]);
    }
    let ps = cfg.proc_mut(p(2));
    ps.pc = LineId::T7;
    ps.tok = Reg::Val(2);
    cfg.shared.go[1] = 0;
    let found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(2))]);
    assert!(!found.contains(&ViolationKind::Fcfs));
}

#[test]
fn try_returning_to_remainder_without_a_signal_is_trivial_abort() {
    let model = Model::new(1);
    let mut monitor = Monitor::new(1);
    let mut cfg = model.initial_config().unwrap();
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try), Action::Step(p(1))]);
    let ps = cfg.proc_mut(p(1));
    ps.pc = LineId::A5;
    ps.abort_from = Reg::Val(AbortFrom::Try);
    let found = observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]);
    assert_eq!(found, vec![ViolationKind::NoTrivialAbort]);
}

#[test]
fn abort_budget_counts_own_steps_after_the_signal() {
    let model = Model::new(2);
    let tight = Bounds { b_abort: 2, ..bounds(2) };
    let mut monitor = Monitor::with_bounds(2, tight);
    let mut cfg = model.initial_config().unwrap();
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(1), Method::Try)]);
    while cfg.proc(p(1)).pc != LineId::Cs {
        observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(1))]);
    }
    observe_all(&model, &mut monitor, &mut cfg, &[Action::Invoke(p(2), Method::Try), Action::SetAbort(p(2))]);
    let mut found = Vec::new();
    while cfg.proc(p(2)).pc != LineId::Rem {
        found.extend(observe_all(&model, &mut monitor, &mut cfg, &[Action::Step(p(2))]));
    }
    assert!(!found.is_empty());
    assert!(found.iter().all(|k| *k == ViolationKind::BoundedAbort), "{found:?}");
}

#[test]
fn progress_reports_attempts_left_open() {
    let model = Model::new(2);
    let params = ProgressParams { crashes_per_attempt: 0, rounds_per_process: 1 };
    assert_eq!(params.action_limit(2), 4);
    let mut progress = Progress::new(2, params);
    let mut cfg = model.initial_config().unwrap();
    let mut found = Vec::new();
    for a in [Action::Invoke(p(1), Method::Try), Action::Step(p(1)), Action::Step(p(1)), Action::Step(p(1)), Action::Step(p(1)), Action::Step(p(1))] {
        let (next, fx) = model.step(&cfg, a).unwrap();
        found.extend(progress.observe(a, &fx).into_iter().map(|v| v.kind));
        cfg = next;
    }
    assert_eq!(found, vec![ViolationKind::Progress]);
    assert_eq!(progress.open_attempts(), 1);
    assert!(progress.finish().is_empty(), "already reported");

    let mut progress = Progress::new(2, ProgressParams::new(1));
    let (_, fx) = model.step(&model.initial_config().unwrap(), Action::Invoke(p(2), Method::Try)).unwrap();
    progress.observe(Action::Invoke(p(2), Method::Try), &fx);
    assert_eq!(progress.finish().len(), 1);
}

#[test]
fn violations_replay_as_traces() {
    let model = Model::new(2);
    let mut actions = vec![Action::Invoke(p(1), Method::Try)];
    actions.extend([Action::Step(p(1)); 4]);
    let vs = monitor_trace(&model, &actions, MonitorParams::default()).unwrap();
    assert!(vs.is_empty());
    let v = rme_core::checker::Violation::new(ViolationKind::Mutex, "example".into()).with_trace(actions.iter().copied());
    let trace = v.to_trace(&model).unwrap();
    assert_eq!(trace.records.len(), actions.len());
    let json = serde_json::to_string(&v).unwrap();
    let back: rme_core::checker::Violation = serde_json::from_str(&json).unwrap();
    assert_eq!(back, v);
}

#[test]
fn status_after_crash_in_each_section() {
    let model = Model::new(1);
    let start = model.step(&model.initial_config().unwrap(), Action::Invoke(p(1), Method::Try)).unwrap().0;
    let cases = [(LineId::T3, Status::RecTry), (LineId::Cs, Status::RecCs), (LineId::E2, Status::RecExit)];
    for (line, status) in cases {
        let cfg = step_to(&model, start.clone(), p(1), line);
        let crashed = model.step(&cfg, Action::Crash(p(1))).unwrap().0;
        assert_eq!(crashed.proc(p(1)).status, status, "crash at {line}");
        assert!(check_invariant(&crashed).is_empty());
    }
    let cfg = model.step(&model.initial_config().unwrap(), Action::Invoke(p(1), Method::Recover)).unwrap().0;
    let crashed = model.step(&cfg, Action::Crash(p(1))).unwrap().0;
    assert_eq!(crashed.proc(p(1)).status, Status::RecRem);
    assert_eq!(crashed.shared.csowner, CsOwner::Free(1));
}
