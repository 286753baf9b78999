//! A recoverable, abortable mutual-exclusion lock on hardware atomics.
//!
//! [`Lock`] holds the shared variables; each process drives it through its
//! own [`Session`]. A session that returns [`SessionError::Crashed`] has lost
//! its registers and must call [`Session::recover`] next.

// crash points and recording compile to nothing without fault injection
#![cfg_attr(not(feature = "fault-injection"), allow(unused))]

pub mod fault;
mod lock;
#[cfg(feature = "fault-injection")]
pub mod stress;
pub mod word;

pub use fault::{CrashPlan, CrashPoint, ParsePlanError, PointMatch};
pub use lock::{Lock, LockError, Outcome, Session, SessionError, MAX_PROCESSES};
