//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub(crate) mod gemm;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
mod tensor;

pub use nn::{
    gaussian_nll, gaussian_nll_iso, gaussian_nll_logvar, kl_diag_gaussian, lstm_cell,
    HALF_LOG_2PI, LOGVAR_MAX, LOGVAR_MIN,
};
pub use optim::{clip_global_norm, clip_store, global_norm, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, Padding, Tape, Var};
pub use tensor::Tensor;
