//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Computations are recorded on a [`Graph`] as they execute (define-by-run)
//! and differentiated with [`Graph::backward`]. Learnable tensors live in a
//! [`ParamStore`] and are brought into a graph with [`Graph::param`].
//!
//! ```
//! use fgpv::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum_all(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).data(), &[2.0, -4.0, 6.0]);
//! ```

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod param;
mod value;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var, Window, LOG_CLAMP};
pub use param::{Adam, Moments, Param, ParamStore};
pub use value::Tensor;
