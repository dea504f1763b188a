//! A small differentiable numeric kernel.
//!
//! [`Matrix`] is a dense row-major `f64` matrix. A [`Tape`] records every
//! operation of one forward pass; calling [`Tape::backward`] on a scalar
//! node propagates gradients to every node in reverse recording order.
//! Tapes are rebuilt for every forward pass (define-by-run).
//!
//! ```
//! use numgrad::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
//! let b = tape.leaf(Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
//! let c = tape.matmul(a, b).unwrap();
//! assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
//!
//! let s = tape.sum(c).unwrap();
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
//! ```

mod check;
mod error;
mod matrix;
mod tape;

pub use check::{CheckEntry, CheckReport, GradCheck, ParamSample};
pub use error::NumError;
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

pub type Result<T, E = NumError> = std::result::Result<T, E>;
