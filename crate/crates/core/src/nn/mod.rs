//! From-scratch recurrent video predictor: dense tensors, same-padded
//! convolution, peephole ConvLSTM cells, a sigmoid head, per-pixel
//! cross-entropy, exact backpropagation through time, and Adam.

pub mod adam;
pub mod cell;
pub mod conv;
pub mod loss;
pub mod model_io;
pub mod network;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use cell::{convlstm_cell_forward, ConvLstmCell};
pub use conv::{conv_same, conv_same_backward};
pub use loss::bce_loss;
pub use model_io::{load_model, read_model, save_model, write_model, ModelIoError};
pub use network::{
    backward, evaluate_loss, network_forward, CellState, NetConfig, NetworkParams, OutputMode,
    BCE_EPS,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{train, train_with_progress, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
}
