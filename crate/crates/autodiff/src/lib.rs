//! Dense `f64` tensors and a small reverse-mode differentiation engine.
//!
//! The tape ([`Graph`]) is rebuilt for every forward pass. Trainable
//! parameters live in [`Mlp`]s (or anything implementing [`Module`]) and are
//! copied onto the tape with `bind`, so gradients come back aligned with
//! [`Module::visit`] order, which is also the order [`adam_step`] and the
//! checkpoint container use.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod params;
pub mod seed;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use mlp::{Activation, BoundMlp, Layer, Mlp};
pub use params::Module;
pub use seed::{mix_seed, splitmix64};
pub use tensor::Tensor;
