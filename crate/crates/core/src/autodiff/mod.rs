//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc};
