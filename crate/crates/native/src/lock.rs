use std::sync::atomic::Ordering::SeqCst;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicU8};

use rme_core::model::{AbortFrom, Caller, CsOwner, LineId, Method, PLine, SharedMemory, SharedOp, Status, Value, Var};
use rme_core::registry::{Cells, Node, Pair, Registry, TreeShape, WriteCursor};
use rme_core::Pid;
use thiserror::Error;

#[cfg(feature = "fault-injection")]
use crate::fault::Recorder;
use crate::fault::{CrashPlan, CrashPoint};
use crate::word::{pack_node, pack_owner, unpack_node, unpack_owner, MAX_SEQ, MAX_TOKEN};

/// Largest number of processes a lock can be built for.
pub const MAX_PROCESSES: usize = 1 << 15;

/// What `try` and `recover` report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    InCs,
    InRem,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockError {
    #[error("a lock needs between 1 and {MAX_PROCESSES} processes, got {0}")]
    Size(usize),
    #[error("process {0} does not exist")]
    NoSuchPid(Pid),
    #[error("process {0} already has a live session")]
    InUse(Pid),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    /// The session crashed at this point; its status has been updated and
    /// it is back in the remainder, ready for `recover`.
    #[error("crashed at {0}")]
    Crashed(CrashPoint),
    #[error("{method} called while {state}")]
    OutOfOrder { method: &'static str, state: String },
}

fn status_code(s: Status) -> u8 {
    match s {
        Status::Good => 0,
        Status::RecTry => 1,
        Status::RecCs => 2,
        Status::RecExit => 3,
        Status::RecRem => 4,
    }
}

fn status_from(c: u8) -> Status {
    match c {
        0 => Status::Good,
        1 => Status::RecTry,
        2 => Status::RecCs,
        3 => Status::RecExit,
        _ => Status::RecRem,
    }
}

/// The shared (persistent) state of the lock. All accesses are
/// sequentially consistent.
pub struct Lock {
    shape: TreeShape,
    token: AtomicU64,
    seq: AtomicU64,
    csowner: AtomicU64,
    go: Box<[AtomicI64]>,
    abort: Box<[AtomicBool]>,
    status: Box<[AtomicU8]>,
    nodes: Box<[AtomicU64]>,
    claimed: Box<[AtomicBool]>,
}

struct AtomicCells<'a>(&'a [AtomicU64]);

impl Cells for AtomicCells<'_> {
    fn load(&mut self, index: usize) -> Node {
        unpack_node(self.0[index].load(SeqCst))
    }

    fn store(&mut self, index: usize, node: Node) {
        self.0[index].store(pack_node(node), SeqCst);
    }

    fn compare_and_swap(&mut self, index: usize, current: Node, new: Node) -> Result<(), Node> {
        self.0[index]
            .compare_exchange(pack_node(current), pack_node(new), SeqCst, SeqCst)
            .map(|_| ())
            .map_err(unpack_node)
    }
}

impl Lock {
    pub fn new(n: usize) -> Result<Self, LockError> {
        if n == 0 || n > MAX_PROCESSES {
            return Err(LockError::Size(n));
        }
        let shape = TreeShape::new(n);
        let atomics = |v: i64| (0..n).map(|_| AtomicI64::new(v)).collect();
        Ok(Lock {
            shape,
            token: AtomicU64::new(1),
            seq: AtomicU64::new(1),
            csowner: AtomicU64::new(pack_owner(CsOwner::Free(1))),
            go: atomics(-1),
            abort: (0..n).map(|_| AtomicBool::new(false)).collect(),
            status: (0..n).map(|_| AtomicU8::new(0)).collect(),
            nodes: shape.initial_nodes().into_iter().map(|nd| AtomicU64::new(pack_node(nd))).collect(),
            claimed: (0..n).map(|_| AtomicBool::new(false)).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    fn check(&self, p: Pid) -> Result<(), LockError> {
        if p.index() < self.n() {
            Ok(())
        } else {
            Err(LockError::NoSuchPid(p))
        }
    }

    /// Handle for process `p`. At most one session per pid is live; dropping
    /// it frees the pid for a new session, which inherits `p`'s status.
    pub fn session(&self, p: Pid) -> Result<Session<'_>, LockError> {
        self.check(p)?;
        if self.claimed[p.index()].swap(true, SeqCst) {
            return Err(LockError::InUse(p));
        }
        Ok(Session {
            lock: self,
            pid: p,
            in_cs: false,
            from: None,
            ops: 0,
            plan: CrashPlan::Never,
            #[cfg(feature = "fault-injection")]
            rec: None,
        })
    }

    /// Raise or lower `p`'s abort signal.
    pub fn set_abort(&self, p: Pid, raised: bool) -> Result<(), LockError> {
        self.check(p)?;
        self.abort[p.index()].store(raised, SeqCst);
        Ok(())
    }

    pub fn abort_raised(&self, p: Pid) -> bool {
        self.abort[p.index()].load(SeqCst)
    }

    pub fn status(&self, p: Pid) -> Status {
        status_from(self.status[p.index()].load(SeqCst))
    }

    pub fn csowner(&self) -> CsOwner {
        unpack_owner(self.csowner.load(SeqCst))
    }

    pub fn go(&self, p: Pid) -> i64 {
        self.go[p.index()].load(SeqCst)
    }

    /// Copy of the shared variables, in the model's representation. Only
    /// meaningful while no session is running.
    pub fn snapshot(&self) -> SharedMemory {
        let mut registry = Registry::new(self.n());
        for (dst, src) in registry.nodes_mut().iter_mut().zip(self.nodes.iter()) {
            *dst = unpack_node(src.load(SeqCst));
        }
        SharedMemory {
            token: self.token.load(SeqCst),
            seq: self.seq.load(SeqCst),
            csowner: self.csowner(),
            go: self.go.iter().map(|g| g.load(SeqCst)).collect(),
            registry,
        }
    }
}

/// One process's handle on a [`Lock`]. Holds the process's volatile
/// registers; a crash discards them.
pub struct Session<'a> {
    lock: &'a Lock,
    pid: Pid,
    in_cs: bool,
    from: Option<AbortFrom>,
    ops: u64,
    #[cfg_attr(not(feature = "fault-injection"), allow(dead_code))]
    plan: CrashPlan,
    #[cfg(feature = "fault-injection")]
    rec: Option<Recorder>,
}

macro_rules! rec {
    ($s:expr, $r:ident => $body:expr) => {
        #[cfg(feature = "fault-injection")]
        if let Some($r) = $s.rec.as_mut() {
            $body;
        }
    };
}

type Step<T> = Result<T, SessionError>;

impl Session<'_> {
    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn lock(&self) -> &Lock {
        self.lock
    }

    pub fn status(&self) -> Status {
        self.lock.status(self.pid)
    }

    pub fn in_cs(&self) -> bool {
        self.in_cs
    }

    /// Shared-memory operations this session has performed.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    /// Install the plan consulted at every crash point.
    #[cfg(feature = "fault-injection")]
    pub fn set_crash_plan(&mut self, plan: CrashPlan) {
        self.plan = plan;
    }

    #[cfg(feature = "fault-injection")]
    pub fn crash_plan(&self) -> &CrashPlan {
        &self.plan
    }

    /// Start or stop recording one effect per step.
    #[cfg(feature = "fault-injection")]
    pub fn record(&mut self, on: bool) {
        self.rec = on.then(Recorder::default);
    }

    /// Effects of the steps completed since the last call.
    #[cfg(feature = "fault-injection")]
    pub fn take_effects(&mut self) -> Vec<rme_core::model::StepEffect> {
        self.rec.as_mut().map(|r| r.take()).unwrap_or_default()
    }

    fn out_of_order(&self, method: &'static str) -> SessionError {
        let state = if self.in_cs {
            "in the critical section".to_owned()
        } else {
            format!("in the remainder with status {:?}", self.status())
        };
        SessionError::OutOfOrder { method, state }
    }

    fn set_status(&self, s: Status) {
        self.lock.status[self.pid.index()].store(status_code(s), SeqCst);
    }

    /// Crash with the program counter at `line`.
    fn crash_at(&mut self, point: CrashPoint) -> SessionError {
        use LineId::*;
        let line = point.line;
        let status = match line {
            T1 | T2 | T3 | T4 | T5 | T6 | T7 | T8 | P(Caller::T5, _) => Status::RecTry,
            Cs => Status::RecCs,
            E1 | E2 | E3 | E4 | E5 | E6 | P(Caller::E5, _) => Status::RecExit,
            Rec1 | Rec2 | Rem => Status::RecRem,
            A1 | A2 | A3 | A4 | A5 | P(Caller::A2, _) => match self.from {
                Some(AbortFrom::Recover) => Status::RecRem,
                _ => Status::RecTry,
            },
        };
        if self.status() == Status::Good {
            self.set_status(status);
        }
        self.in_cs = false;
        self.from = None;
        rec!(self, r => r.crash(self.pid, line));
        SessionError::Crashed(point)
    }

    /// Crash point before `line`, which then starts a new step.
    #[inline]
    fn at(&mut self, line: LineId) -> Step<()> {
        #[cfg(feature = "fault-injection")]
        {
            let point = CrashPoint::before(line);
            if self.plan.fires(point) {
                return Err(self.crash_at(point));
            }
        }
        rec!(self, r => r.begin(self.pid, line));
        Ok(())
    }

    /// Simulate a crash inside the critical section.
    pub fn crash(&mut self) -> Step<()> {
        if !self.in_cs {
            return Err(self.out_of_order("crash"));
        }
        Err(self.crash_at(CrashPoint::before(LineId::Cs)))
    }

    fn op(&mut self, _op: impl FnOnce() -> SharedOp) {
        self.ops += 1;
        rec!(self, r => r.op(_op()));
    }

    fn read_go(&mut self, q: Pid) -> i64 {
        let v = self.lock.go[q.index()].load(SeqCst);
        self.op(|| SharedOp::read(Var::Go(q), Value::Int(v)));
        v
    }

    fn write_go(&mut self, q: Pid, v: i64) {
        let before = self.lock.go[q.index()].swap(v, SeqCst);
        self.op(|| SharedOp::write(Var::Go(q), Value::Int(before), Value::Int(v)));
    }

    fn cas_go(&mut self, q: Pid, expect: i64, new: i64) {
        let r = self.lock.go[q.index()].compare_exchange(expect, new, SeqCst, SeqCst);
        self.op(|| match r {
            Ok(_) => SharedOp::cas(Var::Go(q), Value::Int(expect), Value::Int(new), true),
            Err(found) => SharedOp::cas(Var::Go(q), Value::Int(found), Value::Int(found), false),
        });
    }

    fn read_owner(&mut self) -> CsOwner {
        let v = self.lock.csowner();
        self.op(|| SharedOp::read(Var::CsOwner, Value::Owner(v)));
        v
    }

    fn write_owner(&mut self, v: CsOwner) {
        let before = unpack_owner(self.lock.csowner.swap(pack_owner(v), SeqCst));
        self.op(|| SharedOp::write(Var::CsOwner, Value::Owner(before), Value::Owner(v)));
    }

    fn cas_owner(&mut self, expect: CsOwner, new: CsOwner) -> bool {
        let r = self.lock.csowner.compare_exchange(pack_owner(expect), pack_owner(new), SeqCst, SeqCst);
        self.op(|| match r {
            Ok(_) => SharedOp::cas(Var::CsOwner, Value::Owner(expect), Value::Owner(new), true),
            Err(w) => {
                let found = Value::Owner(unpack_owner(w));
                SharedOp::cas(Var::CsOwner, found, found, false)
            }
        });
        r.is_ok()
    }

    fn findmin(&mut self) -> Pair {
        let root = self.lock.shape.root();
        let node = unpack_node(self.lock.nodes[root].load(SeqCst));
        self.op(|| SharedOp::read(Var::Node(root), Value::Node(node)));
        node.pair
    }

    /// Registry write at `line`, with a crash point between node operations.
    fn registry_write(&mut self, line: LineId, value: Pair) -> Step<()> {
        let lock = self.lock;
        let mut cursor = WriteCursor::new(self.pid, value).expect("own cell");
        let mut cells = AtomicCells(&lock.nodes);
        let mut sub = 0;
        while !cursor.is_done() {
            #[cfg(feature = "fault-injection")]
            if sub > 0 {
                let point = CrashPoint { line, sub };
                if self.plan.fires(point) {
                    return Err(self.crash_at(point));
                }
            }
            #[cfg(not(feature = "fault-injection"))]
            let _ = line;
            if let Some(op) = cursor.step(&lock.shape, &mut cells) {
                self.op(|| op.into());
            }
            sub += 1;
        }
        rec!(self, r => r.composite());
        Ok(())
    }

    fn enter_cs(&mut self) {
        self.in_cs = true;
        rec!(self, r => r.close(LineId::Cs));
    }

    fn return_rem(&mut self) {
        self.in_cs = false;
        rec!(self, r => r.close(LineId::Rem));
    }

    fn outcome(&mut self, _o: rme_core::model::Outcome) {
        rec!(self, r => r.outcome(_o));
    }

    /// Acquire the lock, or give up once the abort signal is seen. Spins
    /// with `yield_now` while waiting.
    pub fn try_lock(&mut self) -> Step<Outcome> {
        use LineId::*;
        if self.in_cs || self.status() != Status::Good {
            return Err(self.out_of_order("try"));
        }
        let p = self.pid;
        rec!(self, r => r.invoke(p, Method::Try));
        self.at(T1)?;
        let tok = self.lock.token.load(SeqCst);
        self.op(|| SharedOp::read(Var::Token, Value::Int(tok as i64)));
        self.at(T2)?;
        assert!(tok < MAX_TOKEN, "token counter exhausted");
        let r = self.lock.token.compare_exchange(tok, tok + 1, SeqCst, SeqCst);
        self.op(|| match r {
            Ok(_) => SharedOp::cas(Var::Token, Value::Int(tok as i64), Value::Int(tok as i64 + 1), true),
            Err(f) => SharedOp::cas(Var::Token, Value::Int(f as i64), Value::Int(f as i64), false),
        });
        self.at(T3)?;
        self.write_go(p, tok as i64);
        self.at(T4)?;
        self.registry_write(T4, Pair::finite(p, tok))?;
        self.at(T5)?;
        self.promote(Caller::T5)?;
        loop {
            self.at(T6)?;
            if self.read_go(p) == 0 {
                break;
            }
            self.at(T6)?;
            let raised = self.lock.abort[p.index()].load(SeqCst);
            self.op(|| SharedOp::read(Var::AbortSig(p), Value::Bool(raised)));
            if raised {
                break;
            }
            std::thread::yield_now();
        }
        self.at(T7)?;
        if self.read_go(p) == 0 {
            self.outcome(rme_core::model::Outcome::TryInCs);
            self.enter_cs();
            return Ok(Outcome::InCs);
        }
        self.at(T8)?;
        self.abort(AbortFrom::Try)
    }

    /// Release the lock.
    pub fn exit(&mut self) -> Step<()> {
        use LineId::*;
        if !self.in_cs {
            return Err(self.out_of_order("exit"));
        }
        self.at(Cs)?;
        self.at(E1)?;
        self.registry_write(E1, Pair::empty(self.pid))?;
        self.at(E2)?;
        let myseq = self.lock.seq.load(SeqCst);
        self.op(|| SharedOp::read(Var::Seq, Value::Int(myseq as i64)));
        self.at(E3)?;
        assert!(myseq < MAX_SEQ, "sequence number exhausted");
        let before = self.lock.seq.swap(myseq + 1, SeqCst);
        self.op(|| SharedOp::write(Var::Seq, Value::Int(before as i64), Value::Int(myseq as i64 + 1)));
        self.at(E4)?;
        self.write_owner(CsOwner::Free(myseq + 1));
        self.at(E5)?;
        self.promote(Caller::E5)?;
        self.at(E6)?;
        self.write_go(self.pid, -1);
        self.outcome(rme_core::model::Outcome::ExitDone);
        self.return_rem();
        Ok(())
    }

    /// Recover after a crash (or harmlessly with status GOOD).
    pub fn recover(&mut self) -> Step<Outcome> {
        use LineId::*;
        if self.in_cs {
            return Err(self.out_of_order("recover"));
        }
        rec!(self, r => r.invoke(self.pid, Method::Recover));
        self.at(Rec1)?;
        if self.read_go(self.pid) == -1 {
            self.set_status(Status::Good);
            self.outcome(rme_core::model::Outcome::RecoverInRem);
            self.return_rem();
            return Ok(Outcome::InRem);
        }
        self.at(Rec2)?;
        self.abort(AbortFrom::Recover)
    }

    fn abort(&mut self, from: AbortFrom) -> Step<Outcome> {
        use rme_core::model::Outcome as Ret;
        use LineId::*;
        self.from = Some(from);
        self.at(A1)?;
        self.registry_write(A1, Pair::empty(self.pid))?;
        self.at(A2)?;
        self.promote(Caller::A2)?;
        self.at(A3)?;
        if self.read_owner() == CsOwner::Owned(self.pid) {
            self.set_status(Status::Good);
            self.outcome(if from == AbortFrom::Try { Ret::TryInCs } else { Ret::RecoverInCs });
            self.enter_cs();
            return Ok(Outcome::InCs);
        }
        self.at(A4)?;
        self.write_go(self.pid, -1);
        self.at(A5)?;
        self.set_status(Status::Good);
        self.outcome(if from == AbortFrom::Try { Ret::TryInRem } else { Ret::RecoverInRem });
        self.return_rem();
        Ok(Outcome::InRem)
    }

    fn promote(&mut self, caller: Caller) -> Step<()> {
        let at = |l: PLine| LineId::P(caller, l);
        self.at(at(PLine::P1))?;
        let peer = match self.read_owner() {
            CsOwner::Owned(q) => q,
            CsOwner::Free(s) => {
                self.at(at(PLine::P2))?;
                let min = self.findmin();
                let peer = if !min.tok.is_infinite() {
                    min.pid
                } else if caller == Caller::A2 {
                    self.pid
                } else {
                    return Ok(());
                };
                self.at(at(PLine::P3))?;
                if !self.cas_owner(CsOwner::Free(s), CsOwner::Owned(peer)) {
                    return Ok(());
                }
                peer
            }
        };
        self.at(at(PLine::P4))?;
        let mygo = self.read_go(peer);
        if mygo == -1 || mygo == 0 {
            return Ok(());
        }
        self.at(at(PLine::P5))?;
        if self.read_owner() != CsOwner::Owned(peer) {
            return Ok(());
        }
        self.at(at(PLine::P6))?;
        self.cas_go(peer, mygo, 0);
        Ok(())
    }
}

impl Drop for Session<'_> {
    /// Abandoning a session inside the critical section counts as a crash
    /// there.
    fn drop(&mut self) {
        if self.in_cs && self.status() == Status::Good {
            self.set_status(Status::RecCs);
        }
        self.lock.claimed[self.pid.index()].store(false, SeqCst);
    }
}
