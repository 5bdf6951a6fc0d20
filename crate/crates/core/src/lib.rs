//! Semi-supervised variational autoencoders over partially-specified
//! graphical models.
//!
//! A model is declared as a set of random variables ([`model::VariableSpec`]),
//! compiled into an [`model::ExecutionPlan`], executed into
//! [`model::Trace`]s, and scored with the estimators in [`objective`].
//! The crate is `no_std` + `alloc`; enable the `std` feature for runtime
//! SIMD dispatch in the matrix kernels.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod data;
pub mod dist;
pub mod error;
pub mod math;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
