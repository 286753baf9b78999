//! Model, checker and cost accounting for a recoverable, abortable
//! mutual-exclusion lock.

pub mod checker;
pub mod model;
pub mod pid;
pub mod registry;
pub mod rmr;
pub mod explorer;

pub use pid::Pid;
