//! Forward and backward kernels for the fixed layer set.
//!
//! Every function here is pure: it reads slices and returns fresh buffers.
//! The tape in [`super::tape`] stitches them together; the public
//! `*_forward` wrappers are the tensor-level entry points.
//!
//! Layouts are row-major: convolution activations are `[B, C, L]`, kernels
//! `[N_out, C_in, F]`, dense weights `[D_in, D_out]`.

use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

/// Leaky-ReLU slope used by every preset network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `c = a · b` (or `c += a · b` when `accumulate`) for row-major operands,
/// with either operand optionally transposed. `a` is `m×k` after the
/// optional transpose, `b` is `k×n`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ── convolution ────────────────────────────────────────────────────

/// Spatial configuration of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeometry {
    pub padding: usize,
    pub stride: usize,
    /// Value read at padded positions: 0 for real convolutions, +1 for
    /// binarized ones (a padded zero binarizes to +1).
    pub pad_value: f64,
}

impl ConvGeometry {
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        let padded = len + 2 * self.padding;
        if kernel == 0 || padded < kernel {
            return Err(Error::Dimension {
                axis: "length (L + 2·padding ≥ F)",
                expected: kernel,
                actual: padded,
            });
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Kernels, bias, and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[N_out, C_in, F]`
    pub kernels: Tensor,
    /// `[N_out]`; absent for binarized layers whose outputs must stay integer.
    pub bias: Option<Tensor>,
    pub padding: usize,
    pub stride: usize,
}

/// Resolved sizes of a convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub n_out: usize,
    pub kernel: usize,
    pub out_len: usize,
}

impl ConvDims {
    pub fn resolve(input: &[usize], kernels: &[usize], geom: &ConvGeometry) -> Result<Self> {
        let [batch, c_in, len] = <[usize; 3]>::try_from(input)
            .map_err(|_| Error::Shape(format!("conv input must be [B, C, L], got {input:?}")))?;
        let [n_out, k_c_in, kernel] = <[usize; 3]>::try_from(kernels).map_err(|_| {
            Error::Shape(format!("conv kernels must be [N, C, F], got {kernels:?}"))
        })?;
        check_dim("input channels", k_c_in, c_in)?;
        let out_len = geom.output_len(len, kernel)?;
        Ok(Self {
            batch,
            c_in,
            len,
            n_out,
            kernel,
            out_len,
        })
    }

    fn row_width(&self) -> usize {
        self.c_in * self.kernel
    }
}

/// Unfolds `[B, C, L]` into rows `(b, t)` × columns `(c, f)`.
pub(crate) fn im2col(input: &[f64], d: &ConvDims, geom: &ConvGeometry) -> Vec<f64> {
    let width = d.row_width();
    let mut cols = vec![0.0; d.batch * d.out_len * width];
    for b in 0..d.batch {
        for t in 0..d.out_len {
            let row = &mut cols[(b * d.out_len + t) * width..][..width];
            let start = (t * geom.stride) as isize - geom.padding as isize;
            for c in 0..d.c_in {
                let src = &input[(b * d.c_in + c) * d.len..][..d.len];
                for f in 0..d.kernel {
                    let pos = start + f as isize;
                    row[c * d.kernel + f] = if pos >= 0 && (pos as usize) < d.len {
                        src[pos as usize]
                    } else {
                        geom.pad_value
                    };
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]; padded positions are dropped.
fn col2im(cols: &[f64], d: &ConvDims, geom: &ConvGeometry) -> Vec<f64> {
    let width = d.row_width();
    let mut out = vec![0.0; d.batch * d.c_in * d.len];
    for b in 0..d.batch {
        for t in 0..d.out_len {
            let row = &cols[(b * d.out_len + t) * width..][..width];
            let start = (t * geom.stride) as isize - geom.padding as isize;
            for c in 0..d.c_in {
                let dst = &mut out[(b * d.c_in + c) * d.len..][..d.len];
                for f in 0..d.kernel {
                    let pos = start + f as isize;
                    if pos >= 0 && (pos as usize) < d.len {
                        dst[pos as usize] += row[c * d.kernel + f];
                    }
                }
            }
        }
    }
    out
}

/// Returns `(output [B, N, L_out], im2col buffer)`.
pub(crate) fn conv1d_raw(
    input: &[f64],
    kernels: &[f64],
    bias: Option<&[f64]>,
    d: &ConvDims,
    geom: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, d, geom);
    let rows = d.batch * d.out_len;
    // [rows, width] · [width, N]  (kernels stored [N, width])
    let mut prod = vec![0.0; rows * d.n_out];
    gemm(rows, d.row_width(), d.n_out, &cols, false, kernels, true, &mut prod, false);
    let mut out = vec![0.0; d.batch * d.n_out * d.out_len];
    for b in 0..d.batch {
        for t in 0..d.out_len {
            let src = &prod[(b * d.out_len + t) * d.n_out..][..d.n_out];
            for (o, &v) in src.iter().enumerate() {
                let bias = bias.map_or(0.0, |bias| bias[o]);
                out[(b * d.n_out + o) * d.out_len + t] = v + bias;
            }
        }
    }
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv1d_backward_raw(
    upstream: &[f64],
    cols: &[f64],
    kernels: &[f64],
    d: &ConvDims,
    geom: &ConvGeometry,
) -> ConvGrads {
    let rows = d.batch * d.out_len;
    let width = d.row_width();
    // Transpose upstream [B, N, T] into [rows = (b, t), N].
    let mut g = vec![0.0; rows * d.n_out];
    let mut bias = vec![0.0; d.n_out];
    for b in 0..d.batch {
        for o in 0..d.n_out {
            let src = &upstream[(b * d.n_out + o) * d.out_len..][..d.out_len];
            for (t, &v) in src.iter().enumerate() {
                g[(b * d.out_len + t) * d.n_out + o] = v;
                bias[o] += v;
            }
        }
    }
    let mut dk = vec![0.0; d.n_out * width];
    gemm(d.n_out, rows, width, &g, true, cols, false, &mut dk, false);
    let mut dcols = vec![0.0; rows * width];
    gemm(rows, d.n_out, width, &g, false, kernels, false, &mut dcols, false);
    ConvGrads {
        input: col2im(&dcols, d, geom),
        kernels: dk,
        bias,
    }
}

/// Zero-padded 1-D convolution: `[B, C_in, L] ⊛ [N_out, C_in, F] → [B, N_out, L_out]`.
pub fn conv1d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let geom = ConvGeometry {
        padding: params.padding,
        stride: params.stride,
        pad_value: 0.0,
    };
    let d = ConvDims::resolve(input.shape(), params.kernels.shape(), &geom)?;
    if let Some(bias) = &params.bias {
        check_dim("bias", d.n_out, bias.len())?;
    }
    let (out, _) = conv1d_raw(
        input.values(),
        params.kernels.values(),
        params.bias.as_ref().map(|b| b.values()),
        &d,
        &geom,
    );
    Tensor::new(vec![d.batch, d.n_out, d.out_len], out)
}

// ── dense ──────────────────────────────────────────────────────────

pub(crate) fn dense_raw(
    input: &[f64],
    weights: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * d_out];
    if let Some(bias) = bias {
        for row in out.chunks_exact_mut(d_out) {
            row.copy_from_slice(bias);
        }
    }
    gemm(batch, d_in, d_out, input, false, weights, false, &mut out, bias.is_some());
    out
}

/// Affine map `input · weights + bias`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [batch, d_in] = input.dims::<2>("dense input")?;
    let [w_in, d_out] = weights.dims::<2>("dense weights")?;
    check_dim("dense inner dimension", w_in, d_in)?;
    check_dim("dense bias", d_out, bias.len())?;
    let out = dense_raw(
        input.values(),
        weights.values(),
        Some(bias.values()),
        batch,
        d_in,
        d_out,
    );
    Tensor::new(vec![batch, d_out], out)
}

// ── activation ─────────────────────────────────────────────────────

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_forward(input: &Tensor, slope: f64) -> Tensor {
    let values = input.values().iter().map(|&x| leaky_relu(x, slope)).collect();
    Tensor::new(input.shape().to_vec(), values).expect("same shape")
}

// ── batch normalization ────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Infer,
}

/// Per-channel batch normalization over the batch and length axes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    /// Weight kept by the running statistics on each update.
    pub momentum: f64,
    pub mode: NormMode,
}

impl BatchNormState {
    pub const EPSILON: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(vec![channels], 1.0),
            beta: Tensor::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: Self::EPSILON,
            momentum: Self::MOMENTUM,
            mode: NormMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
pub(crate) struct NormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes `[B, C, L]` with batch statistics (train) or running ones
/// (infer). Train mode also folds the batch statistics into the running
/// averages.
pub(crate) fn batch_norm_raw(
    input: &[f64],
    shape: [usize; 3],
    gamma: &[f64],
    beta: &[f64],
    state: &mut BatchNormState,
) -> Result<(Vec<f64>, NormSaved)> {
    let [batch, channels, len] = shape;
    check_dim("batch-norm channels", state.channels(), channels)?;
    check_dim("batch-norm gamma", channels, gamma.len())?;
    check_dim("batch-norm beta", channels, beta.len())?;
    let count = batch * len;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    match state.mode {
        NormMode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(count));
            }
            for b in 0..batch {
                for c in 0..channels {
                    mean[c] += input[(b * channels + c) * len..][..len].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for b in 0..batch {
                for c in 0..channels {
                    var[c] += input[(b * channels + c) * len..][..len]
                        .iter()
                        .map(|&x| (x - mean[c]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let keep = state.momentum;
            for c in 0..channels {
                state.running_mean[c] = keep * state.running_mean[c] + (1.0 - keep) * mean[c];
                state.running_var[c] = keep * state.running_var[c] + (1.0 - keep) * var[c];
            }
        }
        NormMode::Infer => {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|&v| 1.0 / (v.max(0.0) + state.epsilon).sqrt())
        .collect();
    let mut xhat = vec![0.0; input.len()];
    let mut out = vec![0.0; input.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for i in base..base + len {
                let h = (input[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
        }
    }
    Ok((out, NormSaved { xhat, inv_std }))
}

pub(crate) struct NormGrads {
    pub input: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn batch_norm_backward_raw(
    upstream: &[f64],
    shape: [usize; 3],
    gamma: &[f64],
    saved: &NormSaved,
    mode: NormMode,
) -> NormGrads {
    let [batch, channels, len] = shape;
    let count = (batch * len) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for i in base..base + len {
                dgamma[c] += upstream[i] * saved.xhat[i];
                dbeta[c] += upstream[i];
            }
        }
    }
    let mut dx = vec![0.0; upstream.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            let scale = gamma[c] * saved.inv_std[c];
            for i in base..base + len {
                dx[i] = match mode {
                    // dxhat = dy·γ; dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    NormMode::Train => {
                        scale * (upstream[i] - dbeta[c] / count - saved.xhat[i] * dgamma[c] / count)
                    }
                    NormMode::Infer => scale * upstream[i],
                };
            }
        }
    }
    NormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn batchnorm_forward(input: &Tensor, state: &mut BatchNormState) -> Result<Tensor> {
    let shape = input.dims::<3>("batch-norm input")?;
    let gamma = state.gamma.values().to_vec();
    let beta = state.beta.values().to_vec();
    let (out, _) = batch_norm_raw(input.values(), shape, &gamma, &beta, state)?;
    Tensor::new(shape.to_vec(), out)
}

// ── pooling ────────────────────────────────────────────────────────

/// Returns `(output, flat argmax index per output)`; ties go to the lowest index.
pub(crate) fn max_pool_raw(
    input: &[f64],
    shape: [usize; 3],
    window: usize,
    stride: usize,
) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let [batch, channels, len] = shape;
    if window == 0 || stride == 0 {
        return Err(Error::Shape("pool window and stride must be positive".into()));
    }
    if window > len {
        return Err(Error::Dimension {
            axis: "pool length (window ≤ L)",
            expected: window,
            actual: len,
        });
    }
    let out_len = (len - window) / stride + 1;
    let mut out = Vec::with_capacity(batch * channels * out_len);
    let mut arg = Vec::with_capacity(out.capacity());
    for row in 0..batch * channels {
        let base = row * len;
        for j in 0..out_len {
            let start = base + j * stride;
            let mut best = start;
            for i in start + 1..start + window {
                if input[i] > input[best] {
                    best = i;
                }
            }
            out.push(input[best]);
            arg.push(best);
        }
    }
    Ok((out, arg, out_len))
}

pub fn maxpool1d_forward(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.dims::<3>("pool input")?;
    let (out, arg, out_len) = max_pool_raw(input.values(), shape, window, stride)?;
    Ok((Tensor::new(vec![shape[0], shape[1], out_len], out)?, arg))
}

// ── loss ───────────────────────────────────────────────────────────

/// Row-wise stabilized softmax plus the mean per-sample cross-entropy.
pub(crate) fn softmax_xent_raw(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for ((row, p), &label) in logits
        .chunks_exact(classes)
        .zip(probs.chunks_exact_mut(classes))
        .zip(labels)
    {
        let (arg, &max) = row
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        // Σ_{j≠argmax} e^(z_j − max), so that log Σ uses ln_1p near zero.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &z)| (z - max).exp())
            .sum();
        let lse = rest.ln_1p();
        let denom = 1.0 + rest;
        for (pi, &z) in p.iter_mut().zip(row) {
            *pi = (z - max).exp() / denom;
        }
        total += lse - (row[label] - max);
    }
    (total / labels.len() as f64, probs)
}

fn labels_from_onehot(onehot: &Tensor, batch: usize, classes: usize) -> Result<Vec<usize>> {
    onehot
        .values()
        .chunks_exact(classes)
        .enumerate()
        .map(|(row, vals)| {
            let ones: Vec<usize> = vals
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(i, _)| i)
                .collect();
            let zeros = vals.iter().filter(|&&v| v == 0.0).count();
            if ones.len() == 1 && zeros == classes - 1 {
                Ok(ones[0])
            } else {
                Err(Error::LabelFormat { row })
            }
        })
        .take(batch)
        .collect()
}

/// Mean softmax cross-entropy over the batch and the row-wise probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, onehot_labels: &Tensor) -> Result<(f64, Tensor)> {
    let [batch, classes] = logits.dims::<2>("logits")?;
    let [l_batch, l_classes] = onehot_labels.dims::<2>("labels")?;
    check_dim("label batch", batch, l_batch)?;
    check_dim("label classes", classes, l_classes)?;
    if classes < 2 {
        return Err(Error::Shape("softmax needs at least two classes".into()));
    }
    let labels = labels_from_onehot(onehot_labels, batch, classes)?;
    let (loss, probs) = softmax_xent_raw(logits.values(), classes, &labels);
    Ok((loss, Tensor::new(vec![batch, classes], probs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_slice(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let params = ConvParams {
            kernels: t(&[1, 1, 3], &[0.0, 1.0, 0.0]),
            bias: Some(t(&[1], &[0.0])),
            padding: 1,
            stride: 1,
        };
        let out = conv1d_forward(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]), &params).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4]);
        assert_eq!(out.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn same_padding_keeps_window_length() {
        let params = ConvParams {
            kernels: Tensor::filled(vec![8, 1, 3], 0.1),
            bias: Some(Tensor::zeros(vec![8])),
            padding: 1,
            stride: 1,
        };
        let out = conv1d_forward(&Tensor::filled(vec![5, 1, 16], 1.0), &params).unwrap();
        assert_eq!(out.shape(), &[5, 8, 16]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let params = ConvParams {
            kernels: Tensor::zeros(vec![2, 3, 3]),
            bias: None,
            padding: 0,
            stride: 1,
        };
        let err = conv1d_forward(&Tensor::zeros(vec![1, 2, 8]), &params).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "input channels", .. }));
        let short = conv1d_forward(&Tensor::zeros(vec![1, 3, 2]), &params).unwrap_err();
        assert!(matches!(short, Error::Dimension { .. }));
    }

    #[test]
    fn strided_output_length() {
        let geom = ConvGeometry {
            padding: 2,
            stride: 3,
            pad_value: 0.0,
        };
        assert_eq!(geom.output_len(10, 5).unwrap(), (10 + 4 - 5) / 3 + 1);
    }

    #[test]
    fn dense_hand_values() {
        let out = dense_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &t(&[2], &[3.0, -3.0]),
        )
        .unwrap();
        assert_eq!(out.values(), &[4.0, -1.0]);
        let bad = dense_forward(&t(&[1, 3], &[0.0; 3]), &Tensor::zeros(vec![2, 2]), &Tensor::zeros(vec![2]));
        assert!(bad.is_err());
    }

    #[test]
    fn leaky_relu_branches() {
        assert_eq!(leaky_relu(3.0, LEAKY_SLOPE), 3.0);
        assert!((leaky_relu(-1.0, LEAKY_SLOPE) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu(0.0, LEAKY_SLOPE), 0.0);
    }

    #[test]
    fn batch_norm_constant_input_is_zero() {
        let mut st = BatchNormState::new(2);
        let out = batchnorm_forward(&Tensor::filled(vec![3, 2, 4], 7.5), &mut st).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_three_values() {
        let mut st = BatchNormState::new(1);
        st.epsilon = 1e-12;
        let out = batchnorm_forward(&t(&[1, 1, 3], &[1.0, 2.0, 3.0]), &mut st).unwrap();
        let expect = [-1.2247, 0.0, 1.2247];
        for (o, e) in out.values().iter().zip(expect) {
            assert!((o - e).abs() < 1e-3, "{o} vs {e}");
        }
    }

    #[test]
    fn batch_norm_rejects_single_sample() {
        let mut st = BatchNormState::new(1);
        let err = batchnorm_forward(&t(&[1, 1, 1], &[1.0]), &mut st).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(1)));
        st.mode = NormMode::Infer;
        assert!(batchnorm_forward(&t(&[1, 1, 1], &[1.0]), &mut st).is_ok());
    }

    #[test]
    fn batch_norm_infer_ignores_batch() {
        let mut st = BatchNormState::new(1);
        st.running_mean = vec![1.0];
        st.running_var = vec![4.0];
        st.epsilon = 0.0;
        st.mode = NormMode::Infer;
        let out = batchnorm_forward(&t(&[1, 1, 2], &[3.0, 5.0]), &mut st).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0]);
        assert_eq!(st.running_mean, vec![1.0]);
    }

    #[test]
    fn running_mean_converges_geometrically() {
        let mut st = BatchNormState::new(1);
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 6.0]);
        let batch_mean = 3.0;
        for k in 1..=30 {
            batchnorm_forward(&x, &mut st).unwrap();
            // gap_k = 0.9^k · gap_0 with gap_0 = batch_mean − 0
            let expect = batch_mean * (1.0 - 0.9f64.powi(k));
            assert!((st.running_mean[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_hand_and_ties() {
        let (out, arg) = maxpool1d_forward(&t(&[1, 1, 4], &[3.0, 1.0, 4.0, 1.0]), 2, 2).unwrap();
        assert_eq!(out.values(), &[3.0, 4.0]);
        assert_eq!(arg, vec![0, 2]);
        let (c, arg) = maxpool1d_forward(&Tensor::filled(vec![1, 2, 6], 2.0), 2, 2).unwrap();
        assert_eq!(c.shape(), &[1, 2, 3]);
        assert!(c.values().iter().all(|&v| v == 2.0));
        assert_eq!(arg, vec![0, 2, 4, 6, 8, 10]);
        assert!(maxpool1d_forward(&Tensor::zeros(vec![1, 1, 1]), 2, 2).is_err());
    }

    #[test]
    fn pooling_twice_collapses_sixteen_to_four() {
        let x = Tensor::filled(vec![2, 16, 16], 0.5);
        let (a, _) = maxpool1d_forward(&x, 2, 2).unwrap();
        let (b, _) = maxpool1d_forward(&a, 2, 2).unwrap();
        assert_eq!(a.shape()[2], 8);
        assert_eq!(b.shape()[2], 4);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let onehot = t(&[1, 2], &[1.0, 0.0]);
        let (l, p) = softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &onehot).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (l, _) = softmax_cross_entropy(&t(&[1, 2], &[10.0, -10.0]), &onehot).unwrap();
        let expect = (-20.0f64).exp().ln_1p();
        assert!((l - expect).abs() / expect < 1e-9, "{l} vs {expect}");
        let (l, _) = softmax_cross_entropy(
            &Tensor::zeros(vec![2, 2]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Tensor::zeros(vec![2, 2]);
        let err = softmax_cross_entropy(&logits, &t(&[2, 2], &[1.0, 0.0, 0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::LabelFormat { row: 1 }));
        let err = softmax_cross_entropy(&logits, &t(&[2, 2], &[1.0, 1.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::LabelFormat { row: 0 }));
    }
}
