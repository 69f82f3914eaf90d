//! Minimal dense-tensor numerics with tape-based reverse-mode
//! differentiation, the layers needed by the detector, Adam, and a
//! finite-difference gradient oracle. Everything is `f64`.

pub mod adam;
pub mod alloc;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod param;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, Adam};
pub use alloc::retain_freed_memory;
pub use error::{NumError, Result};
pub use gradcheck::{check_params, finite_diff_check, relative_error, GradCheckReport};
pub use nn::{mlp_forward, uniform_fan_in, Linear, Mlp, TemporalConv};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{softmax, softmax_row, Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
