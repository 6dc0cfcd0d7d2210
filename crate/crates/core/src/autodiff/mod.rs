//! Reverse-mode differentiation for exactly the layers the decision
//! networks use: 1-D convolution, dense, Leaky-ReLU, batch normalization,
//! max pooling, softmax cross-entropy, and Adam.

mod adam;
pub mod gradcheck;
pub mod ops;
mod tape;

pub use adam::{adam_step, AdamState};
pub use ops::{
    batchnorm_forward, conv1d_forward, dense_forward, leaky_relu, leaky_relu_forward,
    maxpool1d_forward, softmax_cross_entropy, BatchNormState, ConvGeometry, ConvParams, NormMode,
    LEAKY_SLOPE,
};
pub use tape::{SignMode, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Fan-in scaled normal initialization with the gain of a Leaky-ReLU of
/// the given slope: `std = sqrt(2 / (1 + slope²)) / sqrt(fan_in)`.
pub fn kaiming_normal<R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    slope: f64,
    rng: &mut R,
) -> Tensor {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
    let len = shape.iter().product();
    let values = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, values).expect("shape matches")
}
