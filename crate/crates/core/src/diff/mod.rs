//! Reverse-mode automatic differentiation, parameter storage and Adam.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{softplus, CustomOp, Tape, Var};
pub use tensor::{matmul, Tensor};
