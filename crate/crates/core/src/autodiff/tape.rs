//! Reverse-mode tape over the fixed layer set.
//!
//! A forward pass appends one node per operation; [`Tape::backward`] walks
//! the nodes in exact reverse order, consuming the intermediates each node
//! saved. A tape is single-use: record, backward once, then drop it.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::ops::{self, BatchNormState, ConvDims, ConvGeometry, NormMode, NormSaved};
use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Forward behaviour of a binarization node. Both share the
/// straight-through backward, so `HardTanh` is the differentiable
/// surrogate whose exact gradient equals the estimator used in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    Sign,
    HardTanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Option<Var>,
        dims: ConvDims,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Option<Var>,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        saved: NormSaved,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Binarize {
        input: Var,
        clip: f64,
    },
    Reshape {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    state: State,
    faulty_conv: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            state: State::Recording,
            faulty_conv: false,
        }
    }

    /// A tape whose convolution backward deliberately scales the kernel
    /// gradient by 1.1. Negative-control fixture for gradient checking.
    pub fn with_faulty_conv_backward() -> Self {
        Self {
            faulty_conv: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.state != State::Recording {
            return Err(Error::TapeState("tape already consumed by backward"));
        }
        if !value.all_finite() {
            return Err(Error::NumericDomain("forward activation"));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or(Error::TapeState("variable does not belong to this tape"))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records an input or parameter. Its gradient is retrievable after
    /// backward through [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let x = &self.node(input)?.value;
        let k = &self.node(kernels)?.value;
        let dims = ConvDims::resolve(x.shape(), k.shape(), &geom)?;
        let b = match bias {
            Some(b) => {
                let b = &self.node(b)?.value;
                check_dim("bias", dims.n_out, b.len())?;
                Some(b.values())
            }
            None => None,
        };
        let (out, cols) = ops::conv1d_raw(x.values(), k.values(), b, &dims, &geom);
        let value = Tensor::new(vec![dims.batch, dims.n_out, dims.out_len], out)?;
        self.push(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
                dims,
                geom,
                cols,
            },
        )
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Option<Var>) -> Result<Var> {
        let x = &self.node(input)?.value;
        let w = &self.node(weights)?.value;
        let [batch, d_in] = x.dims::<2>("dense input")?;
        let [w_in, d_out] = w.dims::<2>("dense weights")?;
        check_dim("dense inner dimension", w_in, d_in)?;
        let b = match bias {
            Some(b) => {
                let b = &self.node(b)?.value;
                check_dim("dense bias", d_out, b.len())?;
                Some(b.values())
            }
            None => None,
        };
        let out = ops::dense_raw(x.values(), w.values(), b, batch, d_in, d_out);
        let value = Tensor::new(vec![batch, d_out], out)?;
        self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
        )
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        let value = ops::leaky_relu_forward(&self.node(input)?.value, slope);
        self.push(value, Op::LeakyRelu { input, slope })
    }

    /// Batch normalization. Train mode updates `state`'s running statistics
    /// as a side effect of recording.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
    ) -> Result<Var> {
        let x = &self.node(input)?.value;
        let shape = x.dims::<3>("batch-norm input")?;
        let g = self.node(gamma)?.value.values();
        let b = self.node(beta)?.value.values();
        let (out, saved) = ops::batch_norm_raw(x.values(), shape, g, b, state)?;
        let value = Tensor::new(shape.to_vec(), out)?;
        self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mode: state.mode,
                saved,
            },
        )
    }

    pub fn max_pool(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = &self.node(input)?.value;
        let shape = x.dims::<3>("pool input")?;
        let (out, argmax, out_len) = ops::max_pool_raw(x.values(), shape, window, stride)?;
        let value = Tensor::new(vec![shape[0], shape[1], out_len], out)?;
        self.push(value, Op::MaxPool { input, argmax })
    }

    /// Elementwise sign (or its hard-tanh surrogate) with a clipped
    /// straight-through backward.
    pub fn binarize(&mut self, input: Var, mode: SignMode, clip: f64) -> Result<Var> {
        let x = &self.node(input)?.value;
        let values = x
            .values()
            .iter()
            .map(|&v| match mode {
                SignMode::Sign => crate::binary::msb_unchecked(v),
                SignMode::HardTanh => v.clamp(-clip, clip),
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), values)?;
        self.push(value, Op::Binarize { input, clip })
    }

    /// Flattens everything after the batch axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let batch = x.shape()[0];
        let value = x.clone().reshape(vec![batch, x.len() / batch])?;
        self.push(value, Op::Reshape { input })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = &self.node(input)?.value;
        let values = x.values().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), values)?;
        self.push(value, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.node(input)?.value.values().iter().sum();
        self.push(Tensor::new(vec![1], vec![total])?, Op::Sum { input })
    }

    /// Mean softmax cross-entropy against class indices; yields a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = &self.node(logits)?.value;
        let [batch, classes] = z.dims::<2>("logits")?;
        check_dim("label count", batch, labels.len())?;
        if classes < 2 {
            return Err(Error::Shape("softmax needs at least two classes".into()));
        }
        if let Some(row) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::LabelFormat { row });
        }
        let (loss, probs) = ops::softmax_xent_raw(z.values(), classes, labels);
        self.push(
            Tensor::new(vec![1], vec![loss])?,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Fingerprint of every discrete branch taken by the forward pass:
    /// Leaky-ReLU sides, pooling winners, and binarization regions. Two
    /// passes with equal fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { input, .. } => {
                    for &x in self.nodes[input.0].value.values() {
                        (x >= 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::Binarize { input, clip } => {
                    for &x in self.nodes[input.0].value.values() {
                        ((x >= 0.0) as u8 + 2 * (x.abs() <= *clip) as u8).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates `d loss / d v` to every recorded value. `loss` must be a
    /// scalar produced on this tape; a tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.state == State::Consumed {
            return Err(Error::TapeState("backward already ran; record a new forward pass"));
        }
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::TapeState("backward called without a recorded forward pass"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::TapeState("backward needs a scalar loss"));
        }
        self.state = State::Consumed;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &mut self.nodes[idx];
            let op = std::mem::replace(&mut node.op, Op::Leaf);
            match op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv1d {
                    input,
                    kernels,
                    bias,
                    dims,
                    geom,
                    cols,
                } => {
                    let k = self.nodes[kernels.0].value.values();
                    let mut cg = ops::conv1d_backward_raw(&g, &cols, k, &dims, &geom);
                    if self.faulty_conv {
                        cg.kernels.iter_mut().for_each(|v| *v *= 1.1);
                    }
                    accumulate(&mut grads, input, cg.input);
                    accumulate(&mut grads, kernels, cg.kernels);
                    if let Some(b) = bias {
                        accumulate(&mut grads, b, cg.bias);
                    }
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weights.0].value;
                    let [batch, d_in] = [x.shape()[0], x.shape()[1]];
                    let d_out = w.shape()[1];
                    let mut dw = vec![0.0; d_in * d_out];
                    ops::gemm(d_in, batch, d_out, x.values(), true, &g, false, &mut dw, false);
                    let mut dx = vec![0.0; batch * d_in];
                    ops::gemm(batch, d_out, d_in, &g, false, w.values(), true, &mut dx, false);
                    if let Some(b) = bias {
                        let mut db = vec![0.0; d_out];
                        for row in g.chunks_exact(d_out) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                        }
                        accumulate(&mut grads, b, db);
                    }
                    accumulate(&mut grads, weights, dw);
                    accumulate(&mut grads, input, dx);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.nodes[input.0].value.values();
                    let dx = x
                        .iter()
                        .zip(&g)
                        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
                        .collect();
                    accumulate(&mut grads, input, dx);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    mode,
                    saved,
                } => {
                    let shape = self.nodes[input.0].value.dims::<3>("batch-norm input")?;
                    let gv = self.nodes[gamma.0].value.values();
                    let ng = ops::batch_norm_backward_raw(&g, shape, gv, &saved, mode);
                    accumulate(&mut grads, input, ng.input);
                    accumulate(&mut grads, gamma, ng.gamma);
                    accumulate(&mut grads, beta, ng.beta);
                }
                Op::MaxPool { input, argmax } => {
                    let mut dx = vec![0.0; self.nodes[input.0].value.len()];
                    for (&i, &gv) in argmax.iter().zip(&g) {
                        dx[i] += gv;
                    }
                    accumulate(&mut grads, input, dx);
                }
                Op::Binarize { input, clip } => {
                    let x = self.nodes[input.0].value.values();
                    let dx = crate::binary::ste_backward_raw(&g, x, clip);
                    accumulate(&mut grads, input, dx);
                }
                Op::Reshape { input } => accumulate(&mut grads, input, g.clone()),
                Op::Scale { input, factor } => {
                    accumulate(&mut grads, input, g.iter().map(|v| v * factor).collect())
                }
                Op::Sum { input } => {
                    let n = self.nodes[input.0].value.len();
                    accumulate(&mut grads, input, vec![g[0]; n]);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (row, &l) in labels.iter().enumerate() {
                        dz[row * classes + l] -= scale;
                    }
                    accumulate(&mut grads, logits, dz);
                }
            }
            // Interior nodes keep their gradient too, for inspection.
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("backward gradient"));
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap()).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn leaky_gradient_on_negative_branch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[1], &[-2.0]).unwrap()).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let y = tape.scale(y, 3.0).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap()[0] - 0.2 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2])).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::TapeState(_))));
        assert!(matches!(tape.sum(x), Err(Error::TapeState(_))));
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut other = Tape::new();
        let x = other.leaf(Tensor::zeros(vec![1])).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(x), Err(Error::TapeState(_))));
    }

    #[test]
    fn pool_routes_gradient_to_argmax() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::from_slice(&[1, 1, 6], &[1.0, 5.0, 2.0, 2.0, -1.0, -3.0]).unwrap())
            .unwrap();
        let p = tape.max_pool(x, 2, 2).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    }
}
