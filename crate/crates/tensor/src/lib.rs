//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! The element type is generic over [`Scalar`] (`f32` and `f64`). Operations
//! on tensors recorded on a [`Tape`] are themselves recorded, and
//! [`Tensor::backward`] on a scalar result yields [`Gradients`] for every
//! leaf.
//!
//! ```
//! use mnet_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let loss = x.mul(&x).unwrap().sum_all();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::elementwise::{sigmoid, softplus, Activation, EXP_CLAMP};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
