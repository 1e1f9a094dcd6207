//! Dense `f64` tensors, a reverse-mode differentiation tape and the Adam
//! optimizer.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

pub mod adam;
mod error;
#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{DiffError, Result};
pub use tape::{ElementwiseOp, Tape, Var};
pub use tensor::Tensor;
