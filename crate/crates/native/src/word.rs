//! Single-word encodings of the lock's shared variables.

use rme_core::model::CsOwner;
use rme_core::registry::{Node, Pair, Tok};
use rme_core::Pid;

/// Token field value reserved for an empty registry cell.
pub const TOK_INF: u64 = u32::MAX as u64;
/// Largest token a registry node can hold.
pub const MAX_TOKEN: u64 = TOK_INF - 1;
/// Largest pid a node can name, padding leaves included.
pub const MAX_NODE_PID: u32 = u16::MAX as u32;

const OWNED: u64 = 1 << 63;
/// Largest sequence number `csowner` can carry.
pub const MAX_SEQ: u64 = OWNED - 1;

/// `[tok:32][pid:16][tag:16]`.
pub fn pack_node(node: Node) -> u64 {
    let tok = match node.pair.tok {
        Tok::Finite(t) => {
            assert!(t <= MAX_TOKEN, "token {t} does not fit a registry node");
            t
        }
        Tok::Infinite => TOK_INF,
    };
    let pid = node.pair.pid.get();
    assert!(pid <= MAX_NODE_PID, "pid {pid} does not fit a registry node");
    (tok << 32) | ((pid as u64) << 16) | node.tag as u64
}

pub fn unpack_node(w: u64) -> Node {
    let tok = w >> 32;
    let pid = Pid::new(((w >> 16) & 0xffff) as u32);
    let tok = if tok == TOK_INF { Tok::Infinite } else { Tok::Finite(tok) };
    Node::new(Pair::new(pid, tok), (w & 0xffff) as u16)
}

/// Top bit set: owned, pid in the payload. Clear: free, seq in the payload.
pub fn pack_owner(o: CsOwner) -> u64 {
    match o {
        CsOwner::Free(s) => {
            assert!(s <= MAX_SEQ, "sequence number {s} overflows csowner");
            s
        }
        CsOwner::Owned(p) => OWNED | p.get() as u64,
    }
}

pub fn unpack_owner(w: u64) -> CsOwner {
    if w & OWNED != 0 {
        CsOwner::Owned(Pid::new((w & !OWNED) as u32))
    } else {
        CsOwner::Free(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for pair in [Pair::empty(Pid::new(1)), Pair::finite(Pid::new(7), 0), Pair::finite(Pid::new(65535), MAX_TOKEN)] {
            for tag in [0, 1, u16::MAX] {
                let n = Node::new(pair, tag);
                assert_eq!(unpack_node(pack_node(n)), n);
            }
        }
        for o in [CsOwner::Free(0), CsOwner::Free(MAX_SEQ), CsOwner::Owned(Pid::new(1)), CsOwner::Owned(Pid::new(u32::MAX))] {
            assert_eq!(unpack_owner(pack_owner(o)), o);
        }
    }

    #[test]
    #[should_panic(expected = "overflows")]
    fn seq_overflow_is_loud() {
        pack_owner(CsOwner::Free(MAX_SEQ + 1));
    }

    #[test]
    #[should_panic(expected = "does not fit")]
    fn token_overflow_is_loud() {
        pack_node(Node::new(Pair::finite(Pid::new(1), TOK_INF), 0));
    }
}
