//! Error taxonomy shared across the engine, model surgery, and experiments.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for an operation; names the axes involved.
    #[error("dimension mismatch in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    /// Batch-norm train mode called with fewer than two values per channel.
    #[error("degenerate batch: batchnorm train mode needs N*H*W >= 2, got {actual}")]
    DegenerateBatch { actual: usize },

    /// Classification label outside [0, num_classes).
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// A second backward pass was requested on an already-consumed tape.
    #[error("tape already consumed: run a new forward pass before calling backward again")]
    TapeConsumed,

    /// Learning-rate schedule queried outside [0, total_steps].
    #[error("schedule step {step} out of range [0, {total}]")]
    Schedule { step: usize, total: usize },

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A layer id or filter index that does not exist in the network.
    #[error("unknown reference: {0}")]
    Reference(String),

    /// Structural surgery cannot be applied as requested.
    #[error("surgery error: {0}")]
    Surgery(String),

    /// The layer is pinned by a residual connection and cannot be pruned.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// Init snapshot does not line up with the current layer shapes.
    #[error("snapshot error: {0}")]
    Snapshot(String),

    /// A prune plan is inconsistent with the network it targets.
    #[error("plan error: {0}")]
    Plan(String),

    /// K-means preconditions violated or clustering failed.
    #[error("clustering error: {0}")]
    Clustering(String),

    /// Feature encoder misuse (mixed shapes, wrong output width).
    #[error("encoder error: {0}")]
    Encoder(String),

    /// A rewind log is inconsistent with the pruned network.
    #[error("rewind error: {0}")]
    Rewind(String),

    /// Invalid experiment or builder configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
