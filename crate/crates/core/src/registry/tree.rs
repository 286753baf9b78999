use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::pid::Pid;

use super::{Pair, RegistryError};

/// Leaf tag: the leaf value has been propagated to the root by a completed
/// write.
pub const SETTLED: u16 = 1;
/// Leaf tag: a write of the leaf value is in progress (or was interrupted).
pub const UNSETTLED: u16 = 0;

/// One tree cell: the pair it holds plus a 16-bit tag.
///
/// For internal nodes the tag is a version stamp bumped by every successful
/// refresh, so a refresh cannot succeed against a node that changed and
/// changed back in the meantime. For leaves the tag records whether the
/// owner's last write completed ([`SETTLED`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub pair: Pair,
    pub tag: u16,
}

impl Node {
    pub fn new(pair: Pair, tag: u16) -> Self {
        Node { pair, tag }
    }
}

/// Geometry of a tournament tree over `n` leaves, padded to a power of two.
///
/// Nodes are stored heap-style: the root is index 0 and the children of `i`
/// are `2i + 1` and `2i + 2`. Padding leaves hold `(pid, inf)` with
/// `pid > n`, so they never win against a real leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TreeShape {
    n: usize,
    cap: usize,
    levels: u32,
}

impl TreeShape {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a registry needs at least one cell");
        let cap = n.next_power_of_two();
        TreeShape { n, cap, levels: cap.trailing_zeros() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of internal levels, `ceil(log2 n)`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn len(&self) -> usize {
        2 * self.cap - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub const fn root(&self) -> usize {
        0
    }

    pub fn leaf(&self, pid: Pid) -> usize {
        self.cap - 1 + pid.index()
    }

    pub fn is_leaf(&self, index: usize) -> bool {
        index >= self.cap - 1
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        (index > 0).then(|| (index - 1) / 2)
    }

    pub fn children(&self, index: usize) -> (usize, usize) {
        (2 * index + 1, 2 * index + 2)
    }

    /// The process whose memory partition holds `index` on a DSM machine:
    /// leaves live with their owner, internal nodes with the smallest pid
    /// beneath them. Padding is homed at pid `n`.
    pub fn home(&self, index: usize) -> Pid {
        let mut i = index;
        while !self.is_leaf(i) {
            i = 2 * i + 1;
        }
        let slot = i - (self.cap - 1);
        Pid::from_index(slot.min(self.n - 1))
    }

    /// Height of a node above the leaves (leaves are height 0).
    pub fn height(&self, index: usize) -> u32 {
        let mut h = 0;
        let mut i = index;
        while !self.is_leaf(i) {
            i = 2 * i + 1;
            h += 1;
        }
        h
    }

    /// Shared operations performed by a write that has to propagate:
    /// the leaf check, the leaf write, two refreshes of four operations per
    /// level and the final settle.
    pub fn full_write_ops(&self) -> u64 {
        3 + 8 * self.levels as u64
    }

    /// Successful-or-failed CASes on internal nodes performed by one write.
    pub fn write_cas_count(&self) -> u64 {
        2 * self.levels as u64
    }

    /// Coherent initial contents: every leaf `(p, inf)` and settled.
    pub fn initial_nodes(&self) -> Vec<Node> {
        let mut nodes = vec![Node::new(Pair::empty(Pid::new(1)), 0); self.len()];
        for slot in 0..self.cap {
            nodes[self.cap - 1 + slot] = Node::new(Pair::empty(Pid::from_index(slot)), SETTLED);
        }
        for i in (0..self.cap - 1).rev() {
            let (l, r) = self.children(i);
            nodes[i] = Node::new(nodes[l].pair.min(nodes[r].pair), 0);
        }
        nodes
    }
}

/// Storage the tree algorithm runs against: a plain vector in the model,
/// machine atomics in the native lock.
pub trait Cells {
    fn load(&mut self, index: usize) -> Node;
    fn store(&mut self, index: usize, node: Node);
    /// Replace `current` with `new`. On failure returns the value found.
    fn compare_and_swap(&mut self, index: usize, current: Node, new: Node) -> Result<(), Node>;
}

impl Cells for Vec<Node> {
    fn load(&mut self, index: usize) -> Node {
        self[index]
    }

    fn store(&mut self, index: usize, node: Node) {
        self[index] = node;
    }

    fn compare_and_swap(&mut self, index: usize, current: Node, new: Node) -> Result<(), Node> {
        if self[index] == current {
            self[index] = new;
            Ok(())
        } else {
            Err(self[index])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOpKind {
    Read,
    Write,
    Cas { success: bool },
}

/// One shared-memory operation performed by a registry method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeOp {
    pub index: usize,
    pub kind: NodeOpKind,
    pub before: Node,
    pub after: Node,
}

/// Whether refreshes bump internal-node stamps.
///
/// `Unstamped` is the textbook refresh that compares node values only; it is
/// kept so tests can show the ABA interleaving it admits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RefreshMode {
    #[default]
    Stamped,
    Unstamped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Stage {
    Check,
    WriteLeaf { seen: Node },
    ReadNode { node: usize, second: bool },
    ReadLeft { node: usize, second: bool, seen: Node },
    ReadRight { node: usize, second: bool, seen: Node, left: Pair },
    Cas { node: usize, second: bool, seen: Node, min: Pair },
    Settle,
    Done,
}

/// A `write(pid, value)` in progress, advanced one shared operation at a
/// time.
///
/// Abandoning a cursor at any point and running a fresh cursor for the same
/// value to completion leaves every node holding the same pair as a single
/// uninterrupted write would.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WriteCursor {
    writer: Pid,
    value: Pair,
    mode: RefreshMode,
    stage: Stage,
}

impl WriteCursor {
    pub fn new(writer: Pid, value: Pair) -> Result<Self, RegistryError> {
        Self::with_mode(writer, value, RefreshMode::Stamped)
    }

    pub fn with_mode(writer: Pid, value: Pair, mode: RefreshMode) -> Result<Self, RegistryError> {
        if value.pid != writer {
            return Err(RegistryError::ForeignWrite { writer, owner: value.pid });
        }
        Ok(WriteCursor { writer, value, mode, stage: Stage::Check })
    }

    pub fn writer(&self) -> Pid {
        self.writer
    }

    pub fn value(&self) -> Pair {
        self.value
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Perform the next shared operation, or return `None` once complete.
    pub fn step<C: Cells + ?Sized>(&mut self, shape: &TreeShape, cells: &mut C) -> Option<NodeOp> {
        let leaf = shape.leaf(self.writer);
        let (op, next) = match self.stage {
            Stage::Done => return None,
            Stage::Check => {
                let cur = cells.load(leaf);
                let next = if cur.pair == self.value && cur.tag == SETTLED {
                    Stage::Done
                } else {
                    Stage::WriteLeaf { seen: cur }
                };
                (read(leaf, cur), next)
            }
            Stage::WriteLeaf { seen: before } => {
                // only the owner writes its leaf, so the checked value is current
                let after = Node::new(self.value, UNSETTLED);
                cells.store(leaf, after);
                let next = match shape.parent(leaf) {
                    Some(node) => Stage::ReadNode { node, second: false },
                    None => Stage::Settle,
                };
                (NodeOp { index: leaf, kind: NodeOpKind::Write, before, after }, next)
            }
            Stage::ReadNode { node, second } => {
                let seen = cells.load(node);
                (read(node, seen), Stage::ReadLeft { node, second, seen })
            }
            Stage::ReadLeft { node, second, seen } => {
                let (l, _) = shape.children(node);
                let left = cells.load(l);
                (read(l, left), Stage::ReadRight { node, second, seen, left: left.pair })
            }
            Stage::ReadRight { node, second, seen, left } => {
                let (_, r) = shape.children(node);
                let right = cells.load(r);
                let min = left.min(right.pair);
                (read(r, right), Stage::Cas { node, second, seen, min })
            }
            Stage::Cas { node, second, seen, min } => {
                let tag = match self.mode {
                    RefreshMode::Stamped => seen.tag.wrapping_add(1),
                    RefreshMode::Unstamped => seen.tag,
                };
                let new = Node::new(min, tag);
                let (success, before, after) = match cells.compare_and_swap(node, seen, new) {
                    Ok(()) => (true, seen, new),
                    Err(found) => (false, found, found),
                };
                let next = if !second {
                    Stage::ReadNode { node, second: true }
                } else {
                    match shape.parent(node) {
                        Some(parent) => Stage::ReadNode { node: parent, second: false },
                        None => Stage::Settle,
                    }
                };
                (NodeOp { index: node, kind: NodeOpKind::Cas { success }, before, after }, next)
            }
            Stage::Settle => {
                let before = Node::new(self.value, UNSETTLED);
                let after = Node::new(self.value, SETTLED);
                cells.store(leaf, after);
                (NodeOp { index: leaf, kind: NodeOpKind::Write, before, after }, Stage::Done)
            }
        };
        self.stage = next;
        Some(op)
    }

    /// Run to completion, returning every operation performed.
    pub fn run<C: Cells + ?Sized>(&mut self, shape: &TreeShape, cells: &mut C) -> Vec<NodeOp> {
        std::iter::from_fn(|| self.step(shape, cells)).collect()
    }
}

fn read(index: usize, node: Node) -> NodeOp {
    NodeOp { index, kind: NodeOpKind::Read, before: node, after: node }
}

/// Sequential tournament tree used by the model, where each registry method
/// is a single atomic step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registry {
    shape: TreeShape,
    nodes: Vec<Node>,
}

impl Registry {
    pub fn new(n: usize) -> Self {
        let shape = TreeShape::new(n);
        Registry { nodes: shape.initial_nodes(), shape }
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut Vec<Node> {
        &mut self.nodes
    }

    /// The abstract value of cell `pid`.
    pub fn get(&self, pid: Pid) -> Pair {
        self.nodes[self.shape.leaf(pid)].pair
    }

    /// Set a cell and refresh the tree without recording operations; for
    /// building configurations by hand.
    pub fn set(&mut self, pid: Pid, value: Pair) {
        let mut cursor = WriteCursor::new(pid, value).expect("cell owner");
        cursor.run(&self.shape, &mut self.nodes);
    }

    /// Abstract cell values for pids `1..=n`.
    pub fn cells(&self) -> impl Iterator<Item = Pair> + '_ {
        Pid::all(self.shape.n()).map(move |p| self.get(p))
    }

    /// Minimum over the cells by direct scan.
    pub fn scan_min(&self) -> Pair {
        self.cells().min().expect("non-empty")
    }

    pub fn write(&mut self, writer: Pid, value: Pair) -> Result<Vec<NodeOp>, RegistryError> {
        if writer.index() >= self.shape.n() {
            return Err(RegistryError::UnknownPid(writer, self.shape.n()));
        }
        let mut cursor = WriteCursor::new(writer, value)?;
        Ok(cursor.run(&self.shape, &mut self.nodes))
    }

    /// A single read of the root.
    pub fn findmin(&self) -> (Pair, NodeOp) {
        let root = self.nodes[self.shape.root()];
        (root.pair, read(self.shape.root(), root))
    }

    /// Every internal node holds the minimum of its children.
    pub fn is_coherent(&self) -> bool {
        (0..self.shape.len())
            .filter(|&i| !self.shape.is_leaf(i))
            .all(|i| {
                let (l, r) = self.shape.children(i);
                self.nodes[i].pair == self.nodes[l].pair.min(self.nodes[r].pair)
            })
    }

    /// Node pairs without tags; what two trees must agree on to be
    /// observably identical.
    pub fn pairs(&self) -> Vec<Pair> {
        self.nodes.iter().map(|n| n.pair).collect()
    }
}

impl Hash for Registry {
    // Internal nodes are a function of the leaves whenever no write is in
    // flight, which is always the case between model steps; their stamps
    // only matter to concurrent refreshes.
    fn hash<H: Hasher>(&self, state: &mut H) {
        for p in Pid::all(self.shape.n()) {
            self.nodes[self.shape.leaf(p)].hash(state);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{FlatRegistry, Tok};

    fn p(i: u32) -> Pid {
        Pid::new(i)
    }

    #[test]
    fn shape_geometry() {
        let s = TreeShape::new(5);
        assert_eq!(s.levels(), 3);
        assert_eq!(s.len(), 15);
        assert_eq!(s.leaf(p(1)), 7);
        assert_eq!(s.home(0), p(1));
        assert_eq!(s.home(2), p(5));
        // node covering padding slots 6 and 7 only
        assert_eq!(s.home(6), p(5));
        assert_eq!(s.height(0), 3);
        let one = TreeShape::new(1);
        assert_eq!(one.levels(), 0);
        assert_eq!(one.leaf(p(1)), one.root());
    }

    #[test]
    fn single_entry_is_the_minimum() {
        let mut reg = Registry::new(4);
        reg.write(p(2), Pair::finite(p(2), 5)).unwrap();
        assert_eq!(reg.findmin().0, Pair::finite(p(2), 5));
    }

    #[test]
    fn smaller_token_wins_over_later_write() {
        let mut reg = Registry::new(4);
        reg.write(p(2), Pair::finite(p(2), 5)).unwrap();
        reg.write(p(1), Pair::finite(p(1), 7)).unwrap();
        let mut flat = FlatRegistry::new(4);
        flat.write(p(2), Pair::finite(p(2), 5)).unwrap();
        flat.write(p(1), Pair::finite(p(1), 7)).unwrap();
        assert_eq!(reg.findmin().0, flat.findmin());
        assert_eq!(reg.findmin().0, Pair::finite(p(2), 5));
    }

    #[test]
    fn findmin_examples() {
        let reg = Registry::new(3);
        assert_eq!(reg.findmin().0.tok, Tok::Infinite);
        assert_eq!(reg.findmin().0.pid, p(1));

        let mut reg = Registry::new(2);
        reg.write(p(1), Pair::finite(p(1), 5)).unwrap();
        reg.write(p(2), Pair::finite(p(2), 5)).unwrap();
        assert_eq!(reg.findmin().0, Pair::finite(p(1), 5));

        let mut reg = Registry::new(4);
        reg.write(p(3), Pair::finite(p(3), 2)).unwrap();
        reg.write(p(1), Pair::finite(p(1), 9)).unwrap();
        assert_eq!(reg.findmin().0, Pair::finite(p(3), 2));
    }

    #[test]
    fn foreign_write_rejected() {
        let mut reg = Registry::new(2);
        assert!(reg.write(p(1), Pair::finite(p(2), 1)).is_err());
        assert!(WriteCursor::new(p(2), Pair::empty(p(1))).is_err());
    }

    #[test]
    fn full_write_op_count_and_cas_bound() {
        for n in [1usize, 2, 3, 4, 5, 8, 16] {
            let mut reg = Registry::new(n);
            let last = Pid::from_index(n - 1);
            let ops = reg.write(last, Pair::finite(last, 1)).unwrap();
            let shape = *reg.shape();
            assert_eq!(ops.len() as u64, shape.full_write_ops(), "n={n}");
            let cases = ops.iter().filter(|o| matches!(o.kind, NodeOpKind::Cas { .. })).count();
            assert!(cases as u64 <= 2 * shape.levels() as u64);
            assert!(reg.is_coherent());
        }
    }

    #[test]
    fn rewriting_a_settled_value_is_one_read() {
        let mut reg = Registry::new(4);
        let ops = reg.write(p(3), Pair::empty(p(3))).unwrap();
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].kind, NodeOpKind::Read);
    }

    #[test]
    fn interrupted_write_then_rerun_matches_single_write() {
        let value = Pair::finite(p(2), 5);
        let mut clean = Registry::new(4);
        clean.write(p(2), value).unwrap();
        let total = clean.shape().full_write_ops() as usize;
        for prefix in 0..=total {
            let mut reg = Registry::new(4);
            let shape = *reg.shape();
            let mut cursor = WriteCursor::new(p(2), value).unwrap();
            for _ in 0..prefix {
                cursor.step(&shape, reg.nodes_mut());
            }
            reg.write(p(2), value).unwrap();
            assert_eq!(reg.pairs(), clean.pairs(), "prefix {prefix}");
            assert_eq!(reg.get(p(2)), value);
            assert!(reg.is_coherent());
        }
    }
}
