//! Exhaustive interleavings of two registry writers against a flat-scan
//! reference. Shared by the registry tests and the acceptance harness.
#![allow(dead_code)]

use fnv::FnvHashSet;
use rme_core::registry::{FlatRegistry, Node, Pair, RefreshMode, Registry, Tok, TreeShape, WriteCursor};
use rme_core::Pid;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Writer {
    pub cursor: WriteCursor,
    /// Writes of the sequence already completed.
    pub done: usize,
    pub started: bool,
    pub crashed: bool,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Sys {
    pub nodes: Vec<Node>,
    pub w: [Writer; 2],
}

pub struct Scenario {
    pub n: usize,
    pub initial: Vec<Pair>,
    /// Each writer performs its writes in order.
    pub writes: [Vec<Pair>; 2],
    pub mode: RefreshMode,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub states: usize,
    pub bad_findmin: usize,
    pub bad_final: usize,
}

/// Cell values a linearizable registry may expose for writer `w`.
pub fn allowed(initial: Pair, seq: &[Pair], w: &Writer) -> Vec<Pair> {
    let prev = if w.done == 0 { initial } else { seq[w.done - 1] };
    if w.done == seq.len() || !w.started {
        vec![prev]
    } else {
        vec![prev, w.cursor.value()]
    }
}

/// Flat-scan minima over every way of linearizing the in-flight writes.
/// `rest` is the flat scan over the cells nobody writes.
pub fn reference_minima(sc: &Scenario, rest: Option<Pair>, sys: &Sys) -> Vec<Pair> {
    let ia = sys.w[0].cursor.writer().index();
    let ib = sys.w[1].cursor.writer().index();
    let mut out = Vec::with_capacity(4);
    for a in allowed(sc.initial[ia], &sc.writes[0], &sys.w[0]) {
        for b in allowed(sc.initial[ib], &sc.writes[1], &sys.w[1]) {
            out.push(rest.into_iter().chain([a, b]).min().unwrap());
        }
    }
    out
}

/// Every interleaving of two writes (each may crash once and re-execute
/// from scratch) with a findmin probed at every reachable state.
pub fn explore(sc: &Scenario) -> Outcome {
    let shape = TreeShape::new(sc.n);
    let mut reg = Registry::new(sc.n);
    for (i, &v) in sc.initial.iter().enumerate() {
        reg.set(Pid::from_index(i), v);
    }
    let mk = |v: Pair| Writer {
        cursor: WriteCursor::with_mode(v.pid, v, sc.mode).unwrap(),
        done: 0,
        started: false,
        crashed: false,
    };
    let start = Sys { nodes: reg.nodes().to_vec(), w: [mk(sc.writes[0][0]), mk(sc.writes[1][0])] };
    let finished = |i: usize, w: &Writer| w.done == sc.writes[i].len();
    let writers = [sc.writes[0][0].pid, sc.writes[1][0].pid];
    let rest = FlatRegistry::from_cells(sc.initial.iter().copied().filter(|c| !writers.contains(&c.pid)).collect());
    let rest = (sc.n > 2).then(|| rest.findmin());
    let mut seen = FnvHashSet::default();
    let mut stack = vec![start];
    let mut out = Outcome::default();
    while let Some(sys) = stack.pop() {
        if !seen.insert(sys.clone()) {
            continue;
        }
        out.states += 1;
        let root = sys.nodes[shape.root()].pair;
        if !reference_minima(sc, rest, &sys).contains(&root) {
            out.bad_findmin += 1;
        }
        if (0..2).all(|i| finished(i, &sys.w[i])) {
            let mut flat = FlatRegistry::from_cells(sc.initial.clone());
            for seq in &sc.writes {
                let last = *seq.last().unwrap();
                flat.write(last.pid, last).unwrap();
            }
            let leaves_ok = Pid::all(sc.n).all(|q| sys.nodes[shape.leaf(q)].pair == flat.get(q));
            if root != flat.findmin() || !leaves_ok {
                out.bad_final += 1;
            }
            continue;
        }
        for i in 0..2 {
            let w = sys.w[i].clone();
            if finished(i, &w) {
                continue;
            }
            let mut next = sys.clone();
            let nw = &mut next.w[i];
            nw.cursor.step(&shape, &mut next.nodes);
            nw.started = true;
            if nw.cursor.is_done() {
                nw.done += 1;
                nw.started = false;
                if let Some(&v) = sc.writes[i].get(nw.done) {
                    nw.cursor = WriteCursor::with_mode(v.pid, v, sc.mode).unwrap();
                }
            }
            stack.push(next);
            if w.started && !w.crashed {
                let mut next = sys.clone();
                next.w[i].cursor = WriteCursor::with_mode(w.cursor.writer(), w.cursor.value(), sc.mode).unwrap();
                next.w[i].crashed = true;
                stack.push(next);
            }
        }
    }
    out
}

/// Writer pairs up to the tree's symmetry: siblings, and leaves in
/// different subtrees.
pub fn writer_pairs(n: usize) -> Vec<(usize, usize)> {
    match n {
        2 => vec![(0, 1)],
        3 => vec![(0, 1), (0, 2), (1, 2)],
        _ => vec![(0, 1), (1, 2), (0, 3)],
    }
}

pub fn scenarios(n: usize, mode: RefreshMode) -> Vec<Scenario> {
    let toks = [Tok::Infinite, Tok::Finite(2)];
    let new_toks = [Tok::Infinite, Tok::Finite(1), Tok::Finite(3)];
    let mut out = Vec::new();
    for (a, b) in writer_pairs(n) {
        for mask in 0..toks.len().pow(n as u32) {
            let initial: Vec<Pair> = (0..n)
                .map(|i| Pair::new(Pid::from_index(i), toks[(mask / toks.len().pow(i as u32)) % toks.len()]))
                .collect();
            for &ta in &new_toks {
                for &tb in &new_toks {
                    let writes = [vec![Pair::new(Pid::from_index(a), ta)], vec![Pair::new(Pid::from_index(b), tb)]];
                    out.push(Scenario { n, initial: initial.clone(), writes, mode });
                }
            }
        }
    }
    out
}

/// One writer announces and withdraws twice while the other announces once.
pub fn churn(n: usize, mode: RefreshMode) -> Vec<Scenario> {
    let mut out = Vec::new();
    for (a, b) in writer_pairs(n) {
        let (pa, pb) = (Pid::from_index(a), Pid::from_index(b));
        for tb in [1, 3] {
            out.push(Scenario {
                n,
                initial: Pid::all(n).map(Pair::empty).collect(),
                writes: [
                    vec![Pair::finite(pa, 2), Pair::empty(pa), Pair::finite(pa, 2), Pair::empty(pa)],
                    vec![Pair::finite(pb, tb)],
                ],
                mode,
            });
        }
    }
    out
}

/// Crash a write of every cell after every prefix of its node operations,
/// once or twice, then run it to completion: the result must equal one
/// uninterrupted write. Returns the number of prefixes checked.
pub fn crash_prefixes_then_rerun(n: usize) -> Result<usize, String> {
    let mut checked = 0;
    for w in Pid::all(n) {
        for value in [Pair::finite(w, 4), Pair::empty(w)] {
            let mut base = Registry::new(n);
            for q in Pid::all(n).filter(|&q| q != w) {
                base.set(q, Pair::finite(q, 3 + q.get() as u64 % 3));
            }
            base.set(w, Pair::finite(w, 9));
            let mut once = base.clone();
            once.write(w, value).unwrap();
            let total = base.shape().full_write_ops() as usize;
            for prefix in 0..=total {
                for crashes in 1..=2 {
                    let mut reg = base.clone();
                    let shape = *reg.shape();
                    for _ in 0..crashes {
                        let mut cursor = WriteCursor::new(w, value).unwrap();
                        for _ in 0..prefix {
                            cursor.step(&shape, reg.nodes_mut());
                        }
                    }
                    reg.write(w, value).unwrap();
                    if reg.pairs() != once.pairs() || !reg.is_coherent() {
                        return Err(format!("n={n} w={w} value={value:?} prefix={prefix} crashes={crashes}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}
