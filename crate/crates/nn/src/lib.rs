//! Dense tensors and small trainable networks with analytic gradients.
//!
//! Everything here runs on the CPU and is sized for networks of at most a few
//! hundred thousand parameters. Gradients are derived by hand per layer type
//! and checked against central finite differences in the test suite.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::finite_diff_grad;
pub use layer::{Layer, PoolAxis};
pub use network::{Gradients, Network, Param, Tape};
pub use optim::Adam;
pub use tensor::{Scalar, Tensor};
