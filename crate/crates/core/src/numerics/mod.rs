//! Dense `f32` tensors, a reverse-mode tape, Adam, gradient checking and
//! seeded random streams.

mod adam;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    finite_diff_check, relative_error, CoordinateCheck, GradCheckOptions, GradCheckReport,
};
pub use rng::{derive_seed, RngStream};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_VAR_FLOOR};
pub use tensor::Tensor;
