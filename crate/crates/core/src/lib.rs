//! Cluster-guided structured filter pruning for small ConvNets.
//!
//! The crate trains desk-scale convolutional networks with a minimal
//! deterministic reverse-mode autodiff engine, synthesizes per-filter
//! signature images by activation maximization, groups them with k-means,
//! prunes filters per cluster under l1/movement criteria, and evaluates the
//! resulting subnetworks as lottery tickets with weight rewinding.
//!
//! Determinism: every random draw derives from one experiment seed (see
//! [`rng`]), and all parallel loops produce results bitwise identical to
//! their sequential counterparts (see [`exec`]). Model math is f32;
//! statistics accumulate in f64 internally. Debug builds additionally assert
//! that no operation leaves non-finite values behind.

pub mod cluster;
pub mod error;
pub mod exec;
pub mod interpret;
pub mod lottery;
pub mod models;
pub mod pruner;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{onecycle_lr, sgd_momentum_step, BnMode, NodeId, OneCycleSchedule, Tape, Tensor};
