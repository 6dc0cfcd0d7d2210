use super::packed::{dot_unchecked, tail_mask, words_for, PackedBits};
use super::{pack, SignTensor};
use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

/// Integer-valued tensor produced by binarized kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i32>,
}

impl IntTensor {
    pub fn to_tensor(&self) -> Tensor {
        let values = self.values.iter().map(|&v| f64::from(v)).collect();
        Tensor::new(self.shape.clone(), values).expect("same shape")
    }
}

struct Geometry {
    batch: usize,
    c_in: usize,
    len: usize,
    n_out: usize,
    kernel: usize,
    out_len: usize,
}

fn geometry(input: &[usize], kernels: &[usize], padding: usize, stride: usize) -> Result<Geometry> {
    let [batch, c_in, len] = <[usize; 3]>::try_from(input)
        .map_err(|_| Error::Shape(format!("binary conv input must be [B, C, L], got {input:?}")))?;
    let [n_out, k_c, kernel] = <[usize; 3]>::try_from(kernels)
        .map_err(|_| Error::Shape(format!("binary kernels must be [N, C, F], got {kernels:?}")))?;
    check_dim("input channels", k_c, c_in)?;
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    if len + 2 * padding < kernel {
        return Err(Error::Dimension {
            axis: "length (L + 2·padding ≥ F)",
            expected: kernel,
            actual: len + 2 * padding,
        });
    }
    Ok(Geometry {
        batch,
        c_in,
        len,
        n_out,
        kernel,
        out_len: (len + 2 * padding - kernel) / stride + 1,
    })
}

/// Direct `±1` convolution. Padded positions read as `+1`.
pub fn binary_conv1d(
    input: &SignTensor,
    kernels: &SignTensor,
    padding: usize,
    stride: usize,
) -> Result<IntTensor> {
    let g = geometry(input.shape(), kernels.shape(), padding, stride)?;
    let (x, k) = (input.signs(), kernels.signs());
    let mut out = Vec::with_capacity(g.batch * g.n_out * g.out_len);
    for b in 0..g.batch {
        for o in 0..g.n_out {
            for t in 0..g.out_len {
                let mut acc = 0i32;
                for c in 0..g.c_in {
                    for f in 0..g.kernel {
                        let pos = (t * stride + f) as isize - padding as isize;
                        let xv = if pos >= 0 && (pos as usize) < g.len {
                            x[(b * g.c_in + c) * g.len + pos as usize]
                        } else {
                            1
                        };
                        acc += i32::from(xv * k[(o * g.c_in + c) * g.kernel + f]);
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(IntTensor {
        shape: vec![g.batch, g.n_out, g.out_len],
        values: out,
    })
}

/// Packs `[B, C, L]` activations channels-last: row `(b, t)` holds the `C`
/// channel bits at position `t`.
pub fn pack_activations(input: &SignTensor) -> Result<PackedBits> {
    let [batch, c, len] = <[usize; 3]>::try_from(input.shape())
        .map_err(|_| Error::Shape("activations must be [B, C, L]".into()))?;
    let s = input.signs();
    let mut t = Vec::with_capacity(s.len());
    for b in 0..batch {
        for pos in 0..len {
            t.extend((0..c).map(|ch| s[(b * c + ch) * len + pos]));
        }
    }
    Ok(pack(&SignTensor::new(vec![batch, len, c], t)?))
}

/// Packs `[N, C, F]` kernels so that row `(o, f)` holds the `C` channel
/// bits of tap `f`, matching [`pack_activations`].
pub fn pack_kernels(kernels: &SignTensor) -> Result<PackedBits> {
    let [n, c, f] = <[usize; 3]>::try_from(kernels.shape())
        .map_err(|_| Error::Shape("kernels must be [N, C, F]".into()))?;
    let s = kernels.signs();
    let mut t = Vec::with_capacity(s.len());
    for o in 0..n {
        for tap in 0..f {
            t.extend((0..c).map(|ch| s[(o * c + ch) * f + tap]));
        }
    }
    Ok(pack(&SignTensor::new(vec![n, f, c], t)?))
}

/// XNOR/popcount convolution over packed operands from
/// [`pack_activations`] and [`pack_kernels`]. Padded taps read all-ones.
pub fn binary_conv1d_packed(
    input: &PackedBits,
    kernels: &PackedBits,
    padding: usize,
    stride: usize,
) -> Result<IntTensor> {
    let [batch, len, c_in] = <[usize; 3]>::try_from(input.shape())
        .map_err(|_| Error::Shape("packed activations must be [B, L, C]".into()))?;
    let [n_out, kernel, k_c] = <[usize; 3]>::try_from(kernels.shape())
        .map_err(|_| Error::Shape("packed kernels must be [N, F, C]".into()))?;
    let g = geometry(&[batch, c_in, len], &[n_out, k_c, kernel], padding, stride)?;
    let words = words_for(c_in);
    let mut ones = vec![u64::MAX; words];
    *ones.last_mut().expect("c_in ≥ 1") = tail_mask(c_in);
    let mut out = vec![0i32; g.batch * g.n_out * g.out_len];
    for b in 0..g.batch {
        for t in 0..g.out_len {
            for o in 0..g.n_out {
                let mut acc = 0i64;
                for f in 0..g.kernel {
                    let pos = (t * stride + f) as isize - padding as isize;
                    let row = if pos >= 0 && (pos as usize) < g.len {
                        input.row(b * g.len + pos as usize)
                    } else {
                        &ones
                    };
                    acc += dot_unchecked(row, kernels.row(o * g.kernel + f), c_in);
                }
                out[(b * g.n_out + o) * g.out_len + t] = acc as i32;
            }
        }
    }
    Ok(IntTensor {
        shape: vec![g.batch, g.n_out, g.out_len],
        values: out,
    })
}

/// Integer `±1` logits `input · weights` for `[B, D] × [D, K]`.
pub fn binary_dense(input: &SignTensor, weights: &SignTensor) -> Result<IntTensor> {
    let [batch, d_in] = <[usize; 2]>::try_from(input.shape())
        .map_err(|_| Error::Shape("binary dense input must be [B, D]".into()))?;
    let [w_in, d_out] = <[usize; 2]>::try_from(weights.shape())
        .map_err(|_| Error::Shape("binary dense weights must be [D, K]".into()))?;
    check_dim("dense inner dimension", w_in, d_in)?;
    let (x, w) = (input.signs(), weights.signs());
    let mut out = vec![0i32; batch * d_out];
    for b in 0..batch {
        for i in 0..d_in {
            let xv = i32::from(x[b * d_in + i]);
            for j in 0..d_out {
                out[b * d_out + j] += xv * i32::from(w[i * d_out + j]);
            }
        }
    }
    Ok(IntTensor {
        shape: vec![batch, d_out],
        values: out,
    })
}

/// [`binary_dense`] divided by the fan-in, the form fed to softmax.
pub fn binary_dense_scaled(input: &SignTensor, weights: &SignTensor) -> Result<Tensor> {
    let fan_in = input.shape().get(1).copied().unwrap_or(1) as f64;
    let ints = binary_dense(input, weights)?;
    let values = ints.values.iter().map(|&v| f64::from(v) / fan_in).collect();
    Tensor::new(ints.shape, values)
}

/// Packed form of [`binary_dense`]: `input` rows are `[B, D]` bits and
/// `weights_t` rows are the `K` weight columns, `[K, D]`.
pub fn binary_dense_packed(input: &PackedBits, weights_t: &PackedBits) -> Result<IntTensor> {
    check_dim("dense inner dimension", weights_t.row_len(), input.row_len())?;
    let n = input.row_len();
    let (batch, d_out) = (input.rows(), weights_t.rows());
    let mut out = Vec::with_capacity(batch * d_out);
    for b in 0..batch {
        for j in 0..d_out {
            out.push(dot_unchecked(input.row(b), weights_t.row(j), n) as i32);
        }
    }
    Ok(IntTensor {
        shape: vec![batch, d_out],
        values: out,
    })
}
