//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The graph is built eagerly: every op computes its value at construction
//! time and records itself on a [`tape::Tape`]. Calling
//! [`tape::Tape::backward`] replays the recorded ops in reverse and
//! accumulates gradients into a [`tape::ParamSet`]. Tapes are cheap,
//! throwaway objects; parameters live outside them and survive across steps.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tape;

pub use tape::{Mat, NodeId, ParamId, ParamSet, SpikeMode, Tape, TapeError};
