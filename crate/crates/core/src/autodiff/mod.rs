//! Reverse-mode differentiation, parameter storage and optimization.

pub mod gradcheck;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradReport};
pub use params::{adam_step, AdamConfig, Checkpoint, CheckpointTensor, ParamEntry, ParamStore};
pub use tape::{Axis, Gradients, Tape, Var};
