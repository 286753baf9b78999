//! The thirteen-part state invariant plus mutual exclusion.
//!
//! Line ranges follow one convention throughout: a range that covers a
//! `promote` call site together with the line the call returns to also
//! covers every location inside that call. `[T5, T7]` therefore includes
//! `T5::P1..T5::P6`, while `REC2..A2` stops at the call site and excludes
//! `A2::P*`.

use crate::model::{Caller, Configuration, CsOwner, LineId, PLine, ProcessState, Reg, Status};
use crate::pid::Pid;
use crate::registry::{Pair, Tok};

use super::{Violation, ViolationKind};

use LineId::*;

/// Number of invariant conditions.
pub const CONDITIONS: u8 = 13;

fn pline(pc: LineId) -> Option<PLine> {
    pc.promote().map(|(_, l)| l)
}

fn in_p(pc: LineId, lines: &[PLine]) -> bool {
    pline(pc).is_some_and(|l| lines.contains(&l))
}

/// T5..T7 with the T5 call expanded.
fn t5_t7(pc: LineId) -> bool {
    pc.in_t5_t7()
}

/// T5..T8 with the T5 call expanded.
fn t5_t8(pc: LineId) -> bool {
    t5_t7(pc) || pc == T8
}

/// T3..T7 with the T5 call expanded.
fn t3_t7(pc: LineId) -> bool {
    matches!(pc, T3 | T4) || t5_t7(pc)
}

/// T1..E6: the try and exit sections and the CS, calls expanded.
fn t1_e6(pc: LineId) -> bool {
    matches!(pc, T1 | T2 | T3 | T4 | T5 | T6 | T7 | T8 | Cs | E1 | E2 | E3 | E4 | E5 | E6)
        || pc.in_promote_from(Caller::T5)
        || pc.in_promote_from(Caller::E5)
}

fn rem_or_rec1(pc: LineId) -> bool {
    matches!(pc, Rem | Rec1)
}

fn finite_in(tok: Tok, lo: u64, hi_exclusive: u64) -> bool {
    matches!(tok, Tok::Finite(t) if lo <= t && t < hi_exclusive)
}

fn reg_in(r: Reg<u64>, lo: u64, hi_exclusive: u64) -> bool {
    matches!(r, Reg::Val(t) if lo <= t && t < hi_exclusive)
}

fn reg_i_in(r: Reg<i64>, lo: i64, hi_exclusive: i64) -> bool {
    matches!(r, Reg::Val(t) if lo <= t && t < hi_exclusive)
}

fn tok_as_go(r: Reg<u64>) -> Option<i64> {
    r.get().map(|t| t as i64)
}

struct Ctx<'a> {
    cfg: &'a Configuration,
    out: Vec<Violation>,
}

impl Ctx<'_> {
    fn fail(&mut self, cond: u8, detail: String) {
        self.out.push(Violation::new(ViolationKind::Cond(cond), detail));
    }

    fn peer_of(&self, ps: &ProcessState) -> Option<Pid> {
        ps.peer.get().filter(|q| q.get() >= 1 && q.index() < self.cfg.n())
    }
}

/// Evaluate every condition and mutual exclusion on `cfg`. The returned
/// violations carry an empty trace.
pub fn check_invariant(cfg: &Configuration) -> Vec<Violation> {
    let mut cx = Ctx { cfg, out: Vec::new() };
    let sh = &cfg.shared;
    let token = sh.token;

    if token < 1 {
        cx.fail(1, format!("token = {token}"));
    }

    match sh.csowner {
        CsOwner::Free(s) if s != sh.seq => cx.fail(2, format!("csowner = (0, {s}) but seq = {}", sh.seq)),
        CsOwner::Owned(q) if q.index() >= cfg.n() => cx.fail(2, format!("csowner names unknown process {q}")),
        _ => {}
    }

    cond3(&mut cx);
    cond4(&mut cx);
    for p in cfg.pids() {
        cond5(&mut cx, p);
        cond6(&mut cx, p);
        cond7(&mut cx, p);
        cond8(&mut cx, p);
        cond9(&mut cx, p);
        cond10(&mut cx, p);
        cond11(&mut cx, p);
        cond12(&mut cx, p);
        cond13(&mut cx, p);
    }

    let in_cs: Vec<Pid> = cfg.pids().filter(|&p| cfg.proc(p).pc == Cs).collect();
    if in_cs.len() > 1 {
        let names: Vec<String> = in_cs.iter().map(|p| p.to_string()).collect();
        cx.out.push(Violation::new(ViolationKind::Mutex, format!("processes {} are all in the CS", names.join(", "))));
    }
    cx.out
}

/// Bitmask of the conditions that fail on `cfg` (bit `i - 1` for
/// condition `i`); mutual exclusion is bit 13.
pub fn failing_conditions(cfg: &Configuration) -> u16 {
    check_invariant(cfg).iter().fold(0, |m, v| match v.kind {
        ViolationKind::Cond(c) => m | 1 << (c - 1),
        ViolationKind::Mutex => m | 1 << 13,
        _ => m,
    })
}

fn cond3(cx: &mut Ctx) {
    let cfg = cx.cfg;
    let sh = &cfg.shared;
    let min = sh.registry.scan_min();
    if min.tok.is_infinite() {
        return;
    }
    if matches!(sh.csowner, CsOwner::Owned(_)) {
        return;
    }
    let witness = cfg.pids().any(|q| {
        let qs = cfg.proc(q);
        let pc = qs.pc;
        (rem_or_rec1(pc) && sh.go(q) != -1)
            || matches!(pc, T5 | E5 | Rec2 | A1 | A2)
            || in_p(pc, &[PLine::P1])
            || (in_p(pc, &[PLine::P2, PLine::P3]) && qs.myseq.get().is_some_and(|s| sh.csowner == CsOwner::Free(s)))
    });
    if !witness {
        cx.fail(3, format!("registry holds {min} but no process will promote it (csowner = {})", sh.csowner));
    }
}

fn cond4(cx: &mut Ctx) {
    let cfg = cx.cfg;
    let sh = &cfg.shared;
    let CsOwner::Owned(p) = sh.csowner else { return };
    if p.index() >= cfg.n() || sh.go(p) == 0 {
        return;
    }
    let gop = sh.go(p);
    let witness = cfg.pids().any(|q| {
        let qs = cfg.proc(q);
        let pc = qs.pc;
        matches!(pc, Rec2 | A1 | A2)
            || in_p(pc, &[PLine::P1])
            || (in_p(pc, &[PLine::P4]) && qs.peer.is(p))
            || (in_p(pc, &[PLine::P5, PLine::P6]) && qs.peer.is(p) && qs.mygo.is(gop))
            || (rem_or_rec1(pc) && sh.go(q) != -1)
    });
    if !witness {
        cx.fail(4, format!("csowner = (1, {p}) and go[{p}] = {gop} but nobody will release it"));
    }
}

fn cond5(cx: &mut Ctx, p: Pid) {
    let sh = &cx.cfg.shared;
    let ps = cx.cfg.proc(p);
    let pc = ps.pc;
    let go = sh.go(p);
    let token = sh.token as i64;
    let tok = tok_as_go(ps.tok);
    if !(-1 <= go && go < token) {
        cx.fail(5, format!("p={p}: go = {go}, token = {token}"));
    }
    if pc == T4 && tok != Some(go) {
        cx.fail(5, format!("p={p} at T4: go = {go}, tok = {}", ps.tok));
    }
    if t5_t7(pc) && !(go == 0 || tok == Some(go)) {
        cx.fail(5, format!("p={p} at {pc}: go = {go}, tok = {}", ps.tok));
    }
    let busy = matches!(pc, T8 | Cs | E1 | E2 | E3 | E4 | E5 | E6 | Rec2 | A1 | A2 | A3 | A4) || pc.promote().is_some();
    if busy && go == -1 {
        cx.fail(5, format!("p={p} at {pc} with go = -1"));
    }
    let idle = matches!(pc, T1 | T2 | T3 | A5)
        || (rem_or_rec1(pc) && matches!(ps.status, Status::Good | Status::RecRem));
    if idle && go != -1 {
        cx.fail(5, format!("p={p} at {pc} (status {:?}) with go = {go}", ps.status));
    }
}

fn cond6(cx: &mut Ctx, p: Pid) {
    let sh = &cx.cfg.shared;
    let ps = cx.cfg.proc(p);
    let pc = ps.pc;
    let cell = sh.registry.get(p);
    if cell.pid != p || !(cell.tok.is_infinite() || finite_in(cell.tok, 1, sh.token)) {
        cx.fail(6, format!("registry[{p}] = {cell}, token = {}", sh.token));
    }
    if t5_t7(pc) && ps.tok.get().map(|t| Pair::finite(p, t)) != Some(cell) {
        cx.fail(6, format!("p={p} at {pc}: registry[{p}] = {cell}, tok = {}", ps.tok));
    }
    let empty_expected = matches!(pc, T4 | E2 | E3 | E4 | E5 | E6 | A2 | A3 | A4)
        || pc.in_promote_from(Caller::E5)
        || pc.in_promote_from(Caller::A2)
        || sh.go(p) == -1;
    if empty_expected && cell != Pair::empty(p) {
        cx.fail(6, format!("p={p} at {pc}, go = {}: registry[{p}] = {cell}", sh.go(p)));
    }
}

fn cond7(cx: &mut Ctx, p: Pid) {
    let sh = &cx.cfg.shared;
    let ps = cx.cfg.proc(p);
    let pc = ps.pc;
    let go = sh.go(p);
    let owned = sh.csowner == CsOwner::Owned(p);
    let must_own = (t5_t7(pc) && go == 0) || matches!(pc, Cs | E1 | E2 | E3 | E4) || ps.status == Status::RecCs;
    if must_own && !owned {
        cx.fail(7, format!("p={p} at {pc} (go = {go}, status {:?}) but csowner = {}", ps.status, sh.csowner));
    }
    let must_not_own = matches!(pc, T4 | A4 | E5 | E6) || pc.in_promote_from(Caller::E5) || go == -1;
    if must_not_own && owned {
        cx.fail(7, format!("p={p} at {pc} (go = {go}) but csowner = (1, {p})"));
    }
}

fn cond8(cx: &mut Ctx, p: Pid) {
    let sh = &cx.cfg.shared;
    let ps = cx.cfg.proc(p);
    let pc = ps.pc;
    if pc == T2 && !reg_in(ps.tok, 1, sh.token + 1) {
        cx.fail(8, format!("p={p} at T2: tok = {}, token = {}", ps.tok, sh.token));
    }
    if t3_t7(pc) && !reg_in(ps.tok, 1, sh.token) {
        cx.fail(8, format!("p={p} at {pc}: tok = {}, token = {}", ps.tok, sh.token));
    }
    if pc == E3 && !ps.myseq.is(sh.seq) {
        cx.fail(8, format!("p={p} at E3: myseq = {}, seq = {}", ps.myseq, sh.seq));
    }
    if pc == E4 && !ps.myseq.is(sh.seq.wrapping_sub(1)) {
        cx.fail(8, format!("p={p} at E4: myseq = {}, seq = {}", ps.myseq, sh.seq));
    }
    if (pc.in_promote_from(Caller::T5) || pc.in_promote_from(Caller::E5)) && !ps.isaborting.is(false) {
        cx.fail(8, format!("p={p} at {pc}: isaborting = {}", ps.isaborting));
    }
    if pc.in_promote_from(Caller::A2) && !ps.isaborting.is(true) {
        cx.fail(8, format!("p={p} at {pc}: isaborting = {}", ps.isaborting));
    }
    if in_p(pc, &[PLine::P3, PLine::P4, PLine::P5, PLine::P6]) && cx.peer_of(ps).is_none() {
        cx.fail(8, format!("p={p} at {pc}: peer = {}", ps.peer));
    }
    if t1_e6(pc) && ps.status != Status::Good {
        cx.fail(8, format!("p={p} at {pc} with status {:?}", ps.status));
    }
}

fn cond9(cx: &mut Ctx, p: Pid) {
    let ps = cx.cfg.proc(p);
    let go = cx.cfg.shared.go(p);
    if ps.pc == T7 && !(go == 0 || ps.abort_latched) {
        cx.fail(9, format!("p={p} at T7 with go = {go} and no abort observed"));
    }
    if ps.pc == T8 && !ps.abort_latched {
        cx.fail(9, format!("p={p} at T8 with no abort observed"));
    }
}

fn cond10(cx: &mut Ctx, p: Pid) {
    let cfg = cx.cfg;
    let ps = cfg.proc(p);
    if !in_p(ps.pc, &[PLine::P2, PLine::P3]) {
        return;
    }
    let Some(myseq) = ps.myseq.get() else {
        cx.fail(10, format!("p={p} at {}: myseq = POISON", ps.pc));
        return;
    };
    if myseq > cfg.shared.seq {
        cx.fail(10, format!("p={p} at {}: myseq = {myseq} > seq = {}", ps.pc, cfg.shared.seq));
    }
    for q in cfg.pids() {
        let qs = cfg.proc(q);
        if matches!(qs.pc, E3 | E4) && !qs.myseq.get().is_some_and(|s| myseq <= s) {
            cx.fail(10, format!("p={p} at {}: myseq = {myseq} but q={q} at {} has myseq = {}", ps.pc, qs.pc, qs.myseq));
        }
    }
}

fn cond11(cx: &mut Ctx, p: Pid) {
    let cfg = cx.cfg;
    let sh = &cfg.shared;
    let ps = cfg.proc(p);
    let Some(myseq) = ps.myseq.get() else { return };
    if sh.csowner != CsOwner::Free(myseq) {
        return;
    }
    if in_p(ps.pc, &[PLine::P2]) {
        for q in cfg.pids() {
            let qs = cfg.proc(q);
            if sh.registry.get(q) == Pair::empty(q) {
                continue;
            }
            let ok = t5_t8(qs.pc) || matches!(qs.pc, Rec2 | A1) || (rem_or_rec1(qs.pc) && sh.go(q) != -1);
            if !ok {
                cx.fail(
                    11,
                    format!("p={p} at {}: q={q} registered as {} but at {}", ps.pc, sh.registry.get(q), qs.pc),
                );
            }
        }
    }
    if in_p(ps.pc, &[PLine::P3]) {
        let Some(peer) = cx.peer_of(ps) else {
            cx.fail(11, format!("p={p} at {}: peer = {}", ps.pc, ps.peer));
            return;
        };
        let qs = cfg.proc(peer);
        let qpc = qs.pc;
        // T8 included: it only tail-calls abort, and a peer leaving T7 lands there
        let ok = t5_t7(qpc)
            || matches!(qpc, T8 | Rec2 | A1 | A2)
            || qpc == P(Caller::A2, PLine::P1)
            || (matches!(qpc, P(Caller::A2, PLine::P2) | P(Caller::A2, PLine::P3)) && qs.myseq.is(myseq))
            || (rem_or_rec1(qpc) && sh.go(peer) != -1);
        if !ok {
            cx.fail(11, format!("p={p} at {}: peer {peer} at {qpc} (myseq = {}, go = {})", ps.pc, qs.myseq, sh.go(peer)));
        }
    }
}

fn cond12(cx: &mut Ctx, p: Pid) {
    let ps = cx.cfg.proc(p);
    let token = cx.cfg.shared.token as i64;
    if in_p(ps.pc, &[PLine::P5, PLine::P6]) && !reg_i_in(ps.mygo, 1, token) {
        cx.fail(12, format!("p={p} at {}: mygo = {}, token = {token}", ps.pc, ps.mygo));
    }
}

fn cond13(cx: &mut Ctx, p: Pid) {
    let cfg = cx.cfg;
    let sh = &cfg.shared;
    let ps = cfg.proc(p);
    if !in_p(ps.pc, &[PLine::P6]) {
        return;
    }
    let Some(q) = cx.peer_of(ps) else {
        cx.fail(13, format!("p={p} at {}: peer = {}", ps.pc, ps.peer));
        return;
    };
    let qs = cfg.proc(q);
    let Some(mygo) = ps.mygo.get() else {
        cx.fail(13, format!("p={p} at {}: mygo = POISON", ps.pc));
        return;
    };
    if matches!(qs.pc, T2 | T3) && !tok_as_go(qs.tok).is_some_and(|t| 1 <= mygo && mygo < t) {
        cx.fail(13, format!("p={p} at {}: mygo = {mygo}, peer {q} at {} with tok = {}", ps.pc, qs.pc, qs.tok));
    }
    if qs.pc == T4 && !(1 <= mygo && mygo < sh.go(q)) {
        cx.fail(13, format!("p={p} at {}: mygo = {mygo}, peer {q} at T4 with go = {}", ps.pc, sh.go(q)));
    }
    if t5_t7(qs.pc) && mygo == sh.go(q) && sh.csowner != CsOwner::Owned(q) {
        cx.fail(13, format!("p={p} at {}: mygo = go[{q}] = {mygo} but csowner = {}", ps.pc, sh.csowner));
    }
}
