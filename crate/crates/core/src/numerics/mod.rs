//! Dense `f64` tensors, a reverse-mode tape and gradient checking.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    gradient_check, gradient_check_piecewise, gradient_check_store, relative_error, PIECEWISE_STEPS,
    REL_ERROR_FLOOR,
};
pub use params::{uniform_init, uniform_range, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{logsumexp, Activation, Tensor};
