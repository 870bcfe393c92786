//! Dense tensors, tape-based reverse-mode differentiation, Adam, and the
//! `FMAT` binary tensor format.

mod adam;
pub mod fmat;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use fmat::{load_fmat, read_fmat, save_fmat, write_fmat};
pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{softmax_rows, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
