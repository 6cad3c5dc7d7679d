//! Dense numeric primitives with built-in operation counting.
//!
//! Every kernel takes an [`OpCounter`](crate::OpCounter) and increments it by
//! the arithmetic it actually performs; the counts depend only on shapes.

mod activation;
mod conv;
pub(crate) mod gemm;
mod linear;
mod lstm;

pub use activation::{relu, relu_inplace, sigmoid, sigmoid_inplace, tanh, tanh_inplace};
pub use conv::{conv1d, ConvMode};
pub use linear::{layer_norm, linear, LN_EPS};
pub use lstm::{lstm_seq, lstm_step, LstmParams, LstmState};

pub(crate) use conv::{conv_gemm, im2col};
pub(crate) use linear::{layer_norm_rows, linear_rows};
pub(crate) use lstm::PreparedLstm;
