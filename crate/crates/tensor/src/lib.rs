//! Dense f64 tensors with tape-based reverse-mode differentiation.

pub mod attention;
pub mod conv;
mod error;
pub mod gradcheck;
mod graph;
pub mod io;
mod ops;
pub mod optim;
mod params;
mod tensor;

pub use conv::ConvGeom;
pub use error::TensorError;
pub use gradcheck::GradCheck;
pub use graph::{GradSink, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{BnUpdate, Ctx, ParamBuilder, ParamId, ParamStore};
pub use tensor::{broadcast_shape, gemm, matmul, numel, Tensor};
