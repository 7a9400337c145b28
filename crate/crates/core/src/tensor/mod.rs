//! Dense and sparse linear algebra, activation kernels, initialisation, the
//! Adam optimizer and a finite-difference gradient checker.
//!
//! Everything runs single-threaded with a fixed accumulation order, so two
//! runs with the same inputs produce bitwise-identical results.

mod dense;
mod gradcheck;
mod kernels;
mod optim;
mod rng;
mod sparse;

pub use dense::{cosine, dot, norm, DenseMatrix};
pub use gradcheck::grad_check;
pub use kernels::{
    glorot_init, relu, relu_backward, relu_matrix, sigmoid, softmax_cross_entropy, softmax_rows,
};
pub use optim::Adam;
pub use rng::SeededRng;
pub use sparse::{spmm, SparseMatrix};
