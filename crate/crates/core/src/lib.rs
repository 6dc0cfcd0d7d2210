//! Symbol-decision workbench for a 2-PAM radio-over-fiber surrogate link.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`autodiff`]), sign-bit arithmetic for binarized networks ([`binary`]),
//! a baseband channel simulator ([`link`]), windowed datasets ([`dataset`])
//! and the training/evaluation harness ([`harness`]).

pub mod autodiff;
pub mod binary;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod link;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
