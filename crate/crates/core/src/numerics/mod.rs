//! Dense and sparse linear algebra, reverse-mode differentiation and Adam.

mod adam;
mod dense;
mod rng;
mod sparse;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use dense::{argmax, DenseMatrix};
pub use rng::SeededRng;
pub use sparse::SparseSymMatrix;
pub use tape::{cross_entropy, mse, row_softmax, Gradients, Tape, Var};

pub(crate) use tape::normalize_with_degrees;
