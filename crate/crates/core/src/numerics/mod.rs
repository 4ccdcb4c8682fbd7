//! Dense `f64` tensors, a tensor-level reverse-mode tape, and a
//! finite-difference gradient checker.

mod gradcheck;
mod kernels;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradReport, ParamGradError};
pub use kernels::{batchnorm, softmax_row, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use layers::{BatchNorm, Linear};
pub use params::{Bound, ForwardCtx, ParamId, ParamStore, Parameter, StepUpdate};
pub(crate) use params::{normal, uniform, xavier_uniform};
pub use tape::{AttentionLayout, Gradients, NormStats, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod op_gradients;
