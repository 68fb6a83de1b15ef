//! Critical points of Euclidean distance functions to point clouds and
//! parametric submanifolds of R^2 and R^3, genericity checks (P1)-(P4) and
//! the Big Simplex Property, and reproducible experiments on sampling,
//! perturbation and offset topology.

// `!(x > t)` comparisons are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod conditions;
pub mod critical;
pub mod distfield;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod geom;
pub mod jet;
pub mod manifold;
pub mod output;

pub use error::{Error, Result};
pub use geom::Point;
