//! Dense tensors, the differentiation tape, named parameters and their
//! on-disk container.

mod container;
mod dense;
pub mod gradcheck;
mod params;
mod tape;

pub use container::{decode_container, encode_container, read_container, write_container, Container};
pub use dense::Tensor;
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{log_sum_exp, sigmoid, softmax, Precision, Tape, Var};
