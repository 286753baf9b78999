use serde::{Deserialize, Serialize};

use crate::pid::Pid;
use crate::registry::{Pair, Registry, Tok};

use super::action::{Action, ActionKind, Method, Outcome, SharedOp, StepEffect, Value, Var};
use super::line::{Caller, LineId, PLine, Section};
use super::state::{AbortFrom, Configuration, CsOwner, History, ProcessState, Reg, SharedMemory, SpinPhase, Status};
use super::ModelError;

/// A deliberately broken variant of the algorithm, used to check that the
/// checker notices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// P6 writes 0 into `go[peer]` unconditionally instead of CASing it.
    BlindReleaseAtP6,
    /// A2 skips its promote call and goes straight to A3.
    SkipAbortPromote,
    /// E3 leaves `seq` alone and E4 writes `(0, myseq)`.
    ExitWithoutSeqBump,
}

/// When the environment may raise or lower a process's abort signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortPolicy {
    /// Never.
    Disabled,
    /// Raise only while the process is in try, or in recover with status
    /// `REC_TRY`; the signal is lowered when the process next returns to
    /// the remainder normally.
    #[default]
    Sticky,
    /// Raise or lower at any time.
    Toggle,
}

/// The algorithm as a transition system over [`Configuration`]s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Model {
    pub n: usize,
    pub mutation: Mutation,
    pub abort_policy: AbortPolicy,
}

/// The initial configuration of an `n`-process system.
pub fn initial_config(n: usize) -> Result<Configuration, ModelError> {
    if n == 0 {
        return Err(ModelError::NoProcesses);
    }
    Ok(Configuration {
        shared: SharedMemory {
            token: 1,
            seq: 1,
            csowner: CsOwner::Free(1),
            go: vec![-1; n],
            registry: Registry::new(n),
        },
        procs: vec![ProcessState::new(); n],
        history: vec![History::default(); n],
    })
}

impl Model {
    pub fn new(n: usize) -> Self {
        Model { n, mutation: Mutation::None, abort_policy: AbortPolicy::default() }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn with_abort_policy(mut self, policy: AbortPolicy) -> Self {
        self.abort_policy = policy;
        self
    }

    pub fn initial_config(&self) -> Result<Configuration, ModelError> {
        initial_config(self.n)
    }

    /// The environment may raise `p`'s abort signal under the sticky policy.
    pub fn abort_eligible(ps: &ProcessState) -> bool {
        match ps.section() {
            Section::Try => true,
            Section::Recover => ps.status == Status::RecTry,
            _ => false,
        }
    }

    pub fn enabled_actions(&self, cfg: &Configuration, p: Pid) -> Vec<Action> {
        let ps = cfg.proc(p);
        let mut out = Vec::with_capacity(4);
        if ps.pc == LineId::Rem {
            if ps.status == Status::Good {
                out.push(Action::Invoke(p, Method::Try));
            }
            out.push(Action::Invoke(p, Method::Recover));
        } else {
            out.push(Action::Step(p));
            out.push(Action::Crash(p));
        }
        match self.abort_policy {
            AbortPolicy::Disabled => {}
            AbortPolicy::Sticky => {
                if !ps.abortsig && Self::abort_eligible(ps) {
                    out.push(Action::SetAbort(p));
                }
            }
            AbortPolicy::Toggle => out.push(if ps.abortsig { Action::ClearAbort(p) } else { Action::SetAbort(p) }),
        }
        out
    }

    /// Enabled actions of every process, in pid order.
    pub fn all_enabled(&self, cfg: &Configuration) -> Vec<Action> {
        cfg.pids().flat_map(|p| self.enabled_actions(cfg, p)).collect()
    }

    pub fn is_enabled(&self, cfg: &Configuration, a: Action) -> bool {
        let p = a.actor();
        if p.index() >= cfg.n() {
            return false;
        }
        let ps = cfg.proc(p);
        match a {
            Action::Invoke(_, Method::Try) => ps.pc == LineId::Rem && ps.status == Status::Good,
            Action::Invoke(_, Method::Recover) => ps.pc == LineId::Rem,
            Action::Step(_) | Action::Crash(_) => ps.pc != LineId::Rem,
            Action::SetAbort(_) => match self.abort_policy {
                AbortPolicy::Disabled => false,
                AbortPolicy::Sticky => !ps.abortsig && Self::abort_eligible(ps),
                AbortPolicy::Toggle => !ps.abortsig,
            },
            Action::ClearAbort(_) => self.abort_policy == AbortPolicy::Toggle && ps.abortsig,
        }
    }

    /// Apply `a` to `cfg`.
    ///
    /// Returns [`ModelError::NotEnabled`] for an action that is not enabled
    /// and [`ModelError::PoisonRead`] if the step would consume a register
    /// the process has not written since its last crash.
    pub fn step(&self, cfg: &Configuration, a: Action) -> Result<(Configuration, StepEffect), ModelError> {
        if !self.is_enabled(cfg, a) {
            return Err(ModelError::NotEnabled { action: a, line: cfg.procs.get(a.actor().index()).map(|ps| ps.pc) });
        }
        let mut next = cfg.clone();
        let p = a.actor();
        let line = cfg.proc(p).pc;
        let mut fx = Exec { ops: Vec::new(), env_ops: Vec::new(), composite: false, outcome: None };
        match a {
            Action::Invoke(_, method) => {
                let ps = next.proc_mut(p);
                let fresh_attempt = ps.status == Status::Good;
                ps.pc = match method {
                    Method::Try => LineId::T1,
                    Method::Recover => LineId::Rec1,
                };
                if fresh_attempt {
                    ps.abort_latched = false;
                }
                let h = &mut next.history[p.index()];
                h.passage += 1;
                if fresh_attempt {
                    h.attempt += 1;
                    h.steps_in_attempt = 0;
                    h.crashes_in_attempt = 0;
                }
            }
            Action::Step(_) => self.exec(&mut next, p, &mut fx)?,
            Action::Crash(_) => {
                let ps = next.proc_mut(p);
                if ps.status == Status::Good {
                    ps.status = match ps.section() {
                        Section::Try => Status::RecTry,
                        Section::Critical => Status::RecCs,
                        Section::Exit => Status::RecExit,
                        Section::Recover | Section::Remainder => Status::RecRem,
                    };
                }
                ps.pc = LineId::Rem;
                ps.poison_registers();
                next.history[p.index()].crashes_in_attempt += 1;
            }
            Action::SetAbort(_) | Action::ClearAbort(_) => {
                let raise = matches!(a, Action::SetAbort(_));
                let ps = next.proc_mut(p);
                fx.env_ops.push(SharedOp::write(Var::AbortSig(p), Value::Bool(ps.abortsig), Value::Bool(raise)));
                ps.abortsig = raise;
            }
        }
        if a.is_process_step() {
            let h = &mut next.history[p.index()];
            h.steps += 1;
            h.steps_in_attempt += 1;
        }
        let effect = StepEffect {
            actor: p,
            kind: a.kind(),
            invoke: match a {
                Action::Invoke(_, m) => Some(m),
                _ => None,
            },
            line,
            next: next.proc(p).pc,
            ops: fx.ops,
            env_ops: fx.env_ops,
            composite: fx.composite,
            outcome: fx.outcome,
        };
        debug_assert!(effect.kind != ActionKind::Normal || effect.composite || effect.ops.len() <= 1);
        Ok((next, effect))
    }

    fn exec(&self, cfg: &mut Configuration, p: Pid, fx: &mut Exec) -> Result<(), ModelError> {
        use LineId::*;
        let line = cfg.proc(p).pc;
        let poison = |register: &'static str| ModelError::PoisonRead { pid: p, line, register };
        let sh = &mut cfg.shared;
        let ps = &mut cfg.procs[p.index()];
        match line {
            Rem => unreachable!("remainder steps are invocations"),
            T1 => {
                ps.tok = Reg::Val(sh.token);
                fx.read(Var::Token, int(sh.token));
                ps.pc = T2;
            }
            T2 => {
                let tok = ps.tok.get().ok_or_else(|| poison("tok"))?;
                let ok = sh.token == tok;
                let before = int(sh.token);
                if ok {
                    sh.token = tok + 1;
                }
                fx.ops.push(SharedOp::cas(Var::Token, before, int(sh.token), ok));
                ps.pc = T3;
            }
            T3 => {
                let tok = ps.tok.get().ok_or_else(|| poison("tok"))?;
                fx.write(Var::Go(p), Value::Int(sh.go(p)), Value::Int(tok as i64));
                sh.go[p.index()] = tok as i64;
                ps.pc = T4;
            }
            T4 => {
                let tok = ps.tok.get().ok_or_else(|| poison("tok"))?;
                fx.registry_write(&mut sh.registry, p, Pair::finite(p, tok));
                ps.pc = T5;
            }
            T5 | E5 | A2 => {
                let caller = match line {
                    T5 => Caller::T5,
                    E5 => Caller::E5,
                    _ => Caller::A2,
                };
                ps.isaborting = Reg::Val(caller == Caller::A2);
                ps.pc = if caller == Caller::A2 && self.mutation == Mutation::SkipAbortPromote {
                    A3
                } else {
                    P(caller, PLine::P1)
                };
            }
            T6 => match ps.spin {
                SpinPhase::ReadGo => {
                    let go = sh.go(p);
                    fx.read(Var::Go(p), Value::Int(go));
                    if go == 0 {
                        ps.pc = T7;
                    } else {
                        ps.spin = SpinPhase::ReadAbort;
                    }
                }
                SpinPhase::ReadAbort => {
                    fx.read(Var::AbortSig(p), Value::Bool(ps.abortsig));
                    ps.spin = SpinPhase::ReadGo;
                    if ps.abortsig {
                        ps.abort_latched = true;
                        ps.pc = T7;
                    }
                }
            },
            T7 => {
                let go = sh.go(p);
                fx.read(Var::Go(p), Value::Int(go));
                if go == 0 {
                    ps.pc = Cs;
                    fx.outcome = Some(Outcome::TryInCs);
                } else {
                    ps.pc = T8;
                }
            }
            T8 | Rec2 => {
                ps.abort_from = Reg::Val(if line == T8 { AbortFrom::Try } else { AbortFrom::Recover });
                ps.pc = A1;
            }
            Cs => ps.pc = E1,
            E1 | A1 => {
                fx.registry_write(&mut sh.registry, p, Pair::empty(p));
                ps.pc = if line == E1 { E2 } else { A2 };
            }
            E2 => {
                ps.myseq = Reg::Val(sh.seq);
                fx.read(Var::Seq, int(sh.seq));
                ps.pc = E3;
            }
            E3 => {
                let myseq = ps.myseq.get().ok_or_else(|| poison("myseq"))?;
                if self.mutation != Mutation::ExitWithoutSeqBump {
                    fx.write(Var::Seq, int(sh.seq), int(myseq + 1));
                    sh.seq = myseq + 1;
                }
                ps.pc = E4;
            }
            E4 => {
                let myseq = ps.myseq.get().ok_or_else(|| poison("myseq"))?;
                let new = if self.mutation == Mutation::ExitWithoutSeqBump {
                    CsOwner::Free(myseq)
                } else {
                    CsOwner::Free(myseq + 1)
                };
                fx.write(Var::CsOwner, Value::Owner(sh.csowner), Value::Owner(new));
                sh.csowner = new;
                ps.pc = E5;
            }
            E6 | A4 => {
                fx.write(Var::Go(p), Value::Int(sh.go(p)), Value::Int(-1));
                sh.go[p.index()] = -1;
                if line == E6 {
                    ps.pc = Rem;
                    fx.outcome = Some(Outcome::ExitDone);
                    self.on_normal_return(ps, fx, p);
                } else {
                    ps.pc = A5;
                }
            }
            Rec1 => {
                let go = sh.go(p);
                fx.read(Var::Go(p), Value::Int(go));
                if go == -1 {
                    ps.pc = Rem;
                    ps.status = Status::Good;
                    fx.outcome = Some(Outcome::RecoverInRem);
                    self.on_normal_return(ps, fx, p);
                } else {
                    ps.pc = Rec2;
                }
            }
            A3 => {
                let from = ps.abort_from.get().ok_or_else(|| poison("abort_from"))?;
                fx.read(Var::CsOwner, Value::Owner(sh.csowner));
                if sh.csowner == CsOwner::Owned(p) {
                    ps.pc = Cs;
                    ps.status = Status::Good;
                    fx.outcome = Some(match from {
                        AbortFrom::Try => Outcome::TryInCs,
                        AbortFrom::Recover => Outcome::RecoverInCs,
                    });
                } else {
                    ps.pc = A4;
                }
            }
            A5 => {
                let from = ps.abort_from.get().ok_or_else(|| poison("abort_from"))?;
                ps.pc = Rem;
                ps.status = Status::Good;
                fx.outcome = Some(match from {
                    AbortFrom::Try => Outcome::TryInRem,
                    AbortFrom::Recover => Outcome::RecoverInRem,
                });
                self.on_normal_return(ps, fx, p);
            }
            P(caller, pl) => {
                let ret = match caller {
                    Caller::T5 => T6,
                    Caller::E5 => E6,
                    Caller::A2 => A3,
                };
                let at = |l: PLine| P(caller, l);
                match pl {
                    PLine::P1 => {
                        fx.read(Var::CsOwner, Value::Owner(sh.csowner));
                        match sh.csowner {
                            CsOwner::Owned(q) => {
                                ps.bit = Reg::Val(1);
                                ps.myseq = Reg::Val(q.get() as u64);
                                ps.peer = Reg::Val(q);
                                ps.pc = at(PLine::P4);
                            }
                            CsOwner::Free(s) => {
                                ps.bit = Reg::Val(0);
                                ps.myseq = Reg::Val(s);
                                ps.pc = at(PLine::P2);
                            }
                        }
                    }
                    PLine::P2 => {
                        let isaborting = ps.isaborting.get().ok_or_else(|| poison("isaborting"))?;
                        let (min, op) = sh.registry.findmin();
                        fx.ops.push(op.into());
                        ps.peer = Reg::Val(min.pid);
                        ps.min_tok = Reg::Val(min.tok);
                        if min.tok == Tok::Infinite && isaborting {
                            ps.peer = Reg::Val(p);
                            ps.pc = at(PLine::P3);
                        } else if min.tok == Tok::Infinite {
                            ps.pc = ret;
                        } else {
                            ps.pc = at(PLine::P3);
                        }
                    }
                    PLine::P3 => {
                        let myseq = ps.myseq.get().ok_or_else(|| poison("myseq"))?;
                        let peer = ps.peer.get().ok_or_else(|| poison("peer"))?;
                        let before = Value::Owner(sh.csowner);
                        let ok = sh.csowner == CsOwner::Free(myseq);
                        if ok {
                            sh.csowner = CsOwner::Owned(peer);
                        }
                        fx.ops.push(SharedOp::cas(Var::CsOwner, before, Value::Owner(sh.csowner), ok));
                        ps.pc = if ok { at(PLine::P4) } else { ret };
                    }
                    PLine::P4 => {
                        let peer = ps.peer.get().ok_or_else(|| poison("peer"))?;
                        let go = sh.go(peer);
                        fx.read(Var::Go(peer), Value::Int(go));
                        ps.mygo = Reg::Val(go);
                        ps.pc = if go == -1 || go == 0 { ret } else { at(PLine::P5) };
                    }
                    PLine::P5 => {
                        let peer = ps.peer.get().ok_or_else(|| poison("peer"))?;
                        fx.read(Var::CsOwner, Value::Owner(sh.csowner));
                        ps.pc = if sh.csowner != CsOwner::Owned(peer) { ret } else { at(PLine::P6) };
                    }
                    PLine::P6 => {
                        let peer = ps.peer.get().ok_or_else(|| poison("peer"))?;
                        let mygo = ps.mygo.get().ok_or_else(|| poison("mygo"))?;
                        let slot = &mut sh.go[peer.index()];
                        let before = Value::Int(*slot);
                        if self.mutation == Mutation::BlindReleaseAtP6 {
                            *slot = 0;
                            fx.write(Var::Go(peer), before, Value::Int(0));
                        } else {
                            let ok = *slot == mygo;
                            if ok {
                                *slot = 0;
                            }
                            fx.ops.push(SharedOp::cas(Var::Go(peer), before, Value::Int(*slot), ok));
                        }
                        ps.pc = ret;
                    }
                }
                if ps.pc == T6 {
                    ps.spin = SpinPhase::ReadGo;
                }
            }
        }
        Ok(())
    }

    /// Environment reaction to a normal return to the remainder.
    fn on_normal_return(&self, ps: &mut ProcessState, fx: &mut Exec, p: Pid) {
        if self.abort_policy == AbortPolicy::Sticky && ps.abortsig {
            fx.env_ops.push(SharedOp::write(Var::AbortSig(p), Value::Bool(true), Value::Bool(false)));
            ps.abortsig = false;
        }
    }

    /// Apply a sequence of actions from `cfg`, returning every intermediate
    /// configuration and effect.
    pub fn run(
        &self,
        cfg: &Configuration,
        actions: impl IntoIterator<Item = Action>,
    ) -> Result<(Configuration, Vec<StepEffect>), ModelError> {
        let mut cur = cfg.clone();
        let mut effects = Vec::new();
        for a in actions {
            let (next, fx) = self.step(&cur, a)?;
            cur = next;
            effects.push(fx);
        }
        Ok((cur, effects))
    }
}

struct Exec {
    ops: Vec<SharedOp>,
    env_ops: Vec<SharedOp>,
    composite: bool,
    outcome: Option<Outcome>,
}

impl Exec {
    fn read(&mut self, var: Var, v: Value) {
        self.ops.push(SharedOp::read(var, v));
    }

    fn write(&mut self, var: Var, before: Value, after: Value) {
        self.ops.push(SharedOp::write(var, before, after));
    }

    fn registry_write(&mut self, reg: &mut Registry, p: Pid, value: Pair) {
        let ops = reg.write(p, value).expect("a process writes only its own cell");
        self.ops.extend(ops.into_iter().map(SharedOp::from));
        self.composite = true;
    }
}

fn int(v: u64) -> Value {
    Value::Int(v as i64)
}
