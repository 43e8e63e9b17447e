//! Dense neural-network substrate: the five layer kinds the surrogate and the
//! policy need, backpropagation (through time for LSTM), Adam, finite
//! difference gradient checks and the shared checkpoint container.

mod checkpoint;
mod gradcheck;
mod layer;
mod network;
mod optim;
mod scalar;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, gradient_check_strided, weighted_sum_loss, FD_STEP};
pub use layer::{lstm_step, Activation, Layer, LayerKind, LstmState};
pub(crate) use layer::linear_apply;
pub use network::{
    accumulate, clip_global_norm, global_norm, scale, ForwardOutput, Gradients, Mode, Network,
    RecurrentState, Tape,
};
pub use optim::Adam;
pub use scalar::{sigmoid, Scalar};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch{}: {detail}", layer.as_ref().map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape { layer: Option<String>, detail: String },
    #[error("network contains an lstm layer but no recurrent state was supplied")]
    MissingState,
    #[error("recurrent state supplied to a network without lstm layers")]
    UnexpectedState,
    #[error("tape is stale: parameters changed after the forward pass")]
    StaleTape,
    #[error("non-finite activation produced by layer {layer}")]
    NonFinite { layer: String },
    #[error("non-finite gradient in layer {layer} (max |g| = {max_abs})")]
    NonFiniteGradient { layer: String, max_abs: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
