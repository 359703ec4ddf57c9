//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]; a [`Graph`] records one forward pass as a tape
//! of nodes addressed by [`Var`] handles and runs a single reverse sweep in
//! [`Graph::backward`]. Shapes never broadcast implicitly: binary operations
//! accept equal shapes, or one side holding a single element.
//!
//! ```
//! use pcp_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let w = g.leaf(Tensor::new([1, 3], vec![1.0, 1.0, 1.0]).unwrap());
//! let b = g.constant(Tensor::vector(vec![0.5]));
//! let y = g.dense(x, w, Some(b)).unwrap();
//! assert_eq!(g.value(y).data(), &[6.5]);
//! let s = g.sum(y);
//! g.backward(s).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[1.0, 2.0, 3.0]);
//! ```

mod conv;
mod error;
mod gemm;
pub mod gradcheck;
mod graph;
mod lstm;
mod tensor;

pub use conv::{ConvSpec, Padding};
pub use error::{Result, TensorError};
pub use graph::{sigmoid, softmax, Graph, Var};
pub use lstm::LstmWeights;
pub use tensor::Tensor;
