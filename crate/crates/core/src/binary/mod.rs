//! Sign-bit arithmetic for the binarized network.
//!
//! Values are binarized with [`msb`] (`x ≥ 0 → +1`, else `−1`), convolved
//! either naively on `±1` integers or through bit-packed XNOR/popcount
//! kernels, and trained through a clipped straight-through estimator.

mod conv;
mod packed;

pub use conv::{
    binary_conv1d, binary_conv1d_packed, binary_dense, binary_dense_packed, binary_dense_scaled,
    pack_activations, pack_kernels, IntTensor,
};
pub use packed::{pack, unpack, xnor_popcount_dot, PackedBits, WORD_BITS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sign of `x` as `±1`, with `msb(0) = +1`.
pub fn msb(x: f64) -> Result<i8> {
    if x.is_nan() {
        return Err(Error::NumericDomain("msb input"));
    }
    Ok(if x >= 0.0 { 1 } else { -1 })
}

#[inline]
pub(crate) fn msb_unchecked(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A tensor whose every element is exactly `−1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignTensor {
    shape: Vec<usize>,
    signs: Vec<i8>,
}

impl SignTensor {
    pub fn new(shape: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != signs.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "sign tensor {shape:?} cannot hold {} values",
                signs.len()
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::NumericDomain("sign tensor element outside {-1, +1}"));
        }
        Ok(Self { shape, signs })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    /// The same `±1` values as reals.
    pub fn to_tensor(&self) -> Tensor {
        let values = self.signs.iter().map(|&s| f64::from(s)).collect();
        Tensor::new(self.shape.clone(), values).expect("same shape")
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.signs.len() {
            return Err(Error::Shape(format!("cannot view {:?} as {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Elementwise [`msb`].
pub fn binarize(input: &Tensor) -> Result<SignTensor> {
    let signs = input.values().iter().map(|&x| msb(x)).collect::<Result<_>>()?;
    SignTensor::new(input.shape().to_vec(), signs)
}

pub(crate) fn ste_backward_raw(upstream: &[f64], latent: &[f64], clip: f64) -> Vec<f64> {
    upstream
        .iter()
        .zip(latent)
        .map(|(&g, &x)| if x.abs() <= clip { g } else { 0.0 })
        .collect()
}

/// Straight-through estimator: the upstream gradient passes wherever
/// `|latent| ≤ clip` and is zeroed elsewhere.
pub fn ste_backward(upstream: &Tensor, latent: &Tensor, clip: f64) -> Result<Tensor> {
    if upstream.shape() != latent.shape() {
        return Err(Error::Shape(format!(
            "STE shapes differ: {:?} vs {:?}",
            upstream.shape(),
            latent.shape()
        )));
    }
    Tensor::new(
        upstream.shape().to_vec(),
        ste_backward_raw(upstream.values(), latent.values(), clip),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_values() {
        assert_eq!(msb(0.7).unwrap(), 1);
        assert_eq!(msb(-0.3).unwrap(), -1);
        assert_eq!(msb(0.0).unwrap(), 1);
        assert_eq!(msb(-0.0).unwrap(), 1);
        assert!(matches!(msb(f64::NAN), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn binarize_elementwise_and_idempotent() {
        let x = Tensor::from_slice(&[3], &[0.5, -2.0, 0.0]).unwrap();
        let s = binarize(&x).unwrap();
        assert_eq!(s.signs(), &[1, -1, 1]);
        assert_eq!(binarize(&s.to_tensor()).unwrap(), s);
        let bad = Tensor::from_slice(&[2], &[1.0, f64::NAN]).unwrap();
        assert!(binarize(&bad).is_err());
    }

    #[test]
    fn sign_tensor_rejects_other_values() {
        assert!(SignTensor::new(vec![2], vec![1, 0]).is_err());
        assert!(SignTensor::new(vec![3], vec![1, -1]).is_err());
    }

    #[test]
    fn ste_clip_window() {
        let g = Tensor::from_slice(&[3], &[2.0, 2.0, -1.0]).unwrap();
        let latent = Tensor::from_slice(&[3], &[0.5, 1.5, -1.0]).unwrap();
        let out = ste_backward(&g, &latent, 1.0).unwrap();
        assert_eq!(out.values(), &[2.0, 0.0, -1.0]);
    }

    #[test]
    fn ste_is_identity_inside_clip() {
        let g = Tensor::from_slice(&[4], &[0.1, -3.0, 7.0, 0.0]).unwrap();
        let latent = Tensor::from_slice(&[4], &[0.9, -1.0, 0.0, 0.3]).unwrap();
        assert_eq!(ste_backward(&g, &latent, 1.0).unwrap(), g);
    }
}
