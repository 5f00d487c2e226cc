//! Tensor network skeletonization for classical Ising partition functions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// axis loops index several parallel arrays and bit masks at once
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod coarsegrain2d;
pub mod coarsegrain3d;
mod driver;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod logscalar;
pub mod models;
pub mod network;
pub mod reference;
pub mod selftest;
pub mod skeleton;
pub mod tensor;

pub use error::{Result, TnsError};
pub use logscalar::LogScalar;
pub use tensor::DenseTensor;
