use crate::pid::Pid;

use super::{Pair, RegistryError};

/// Reference min-array: one cell per process, `findmin` scans them all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatRegistry {
    cells: Vec<Pair>,
}

impl FlatRegistry {
    pub fn new(n: usize) -> Self {
        FlatRegistry { cells: Pid::all(n).map(Pair::empty).collect() }
    }

    pub fn from_cells(cells: Vec<Pair>) -> Self {
        FlatRegistry { cells }
    }

    pub fn write(&mut self, writer: Pid, value: Pair) -> Result<(), RegistryError> {
        if value.pid != writer {
            return Err(RegistryError::ForeignWrite { writer, owner: value.pid });
        }
        let cell = self
            .cells
            .get_mut(writer.index())
            .ok_or(RegistryError::UnknownPid(writer, 0))?;
        *cell = value;
        Ok(())
    }

    /// The minimum cell. With every cell empty this is the empty cell of the
    /// smallest pid.
    pub fn findmin(&self) -> Pair {
        *self.cells.iter().min().expect("registry has at least one cell")
    }

    pub fn get(&self, pid: Pid) -> Pair {
        self.cells[pid.index()]
    }

    pub fn cells(&self) -> &[Pair] {
        &self.cells
    }
}
