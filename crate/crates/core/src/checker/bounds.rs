use serde::{Deserialize, Serialize};

use crate::registry::TreeShape;

/// Step budgets for the bounded properties, in cost units: one per shared
/// operation, one for a step that touches nothing, and every node
/// operation of a registry method counted separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub b_exit: u64,
    pub b_abort: u64,
    pub b_rec_cs: u64,
    pub b_rec_exit: u64,
    pub b_fast_rem: u64,
    pub b_rec_rem: u64,
}

/// Budgets for an `n`-process system.
///
/// `w` is the cost of a registry write that has to propagate to the root.
/// The constants count the longest crash-free path through each method:
///
/// * exit: invocation, E1 (`w`), E2..E5, six promote lines, E6.
/// * recover with `REC_CS`: invocation, REC1, REC2, A1 (`w`), A2, promote
///   taking the owner shortcut (P1, P4, P5, P6), A3.
/// * recover otherwise: invocation, REC1, REC2, A1 (`w`), A2, six promote
///   lines, A3, A4, A5.
/// * fast recovery: invocation and REC1.
/// * abort: from the start of try, T1..T3, T4 (`w`), T5, six promote lines,
///   both T6 reads, T7, T8, A1 (`w`), A2, six promote lines, A3..A5.
pub fn bounds(n: usize) -> Bounds {
    let w = TreeShape::new(n).full_write_ops();
    Bounds {
        b_exit: 12 + w,
        b_abort: 24 + 2 * w,
        b_rec_cs: 9 + w,
        b_rec_exit: 13 + w,
        b_fast_rem: 2,
        b_rec_rem: 13 + w,
    }
}
