use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{self, ConvDims};
use crate::autodiff::{
    adam_step, kaiming_normal, AdamState, BatchNormState, ConvGeometry, NormMode, SignMode, Tape,
    Var, LEAKY_SLOPE,
};
use crate::binary::{self, binary_conv1d_packed, binary_dense_packed, PackedBits, SignTensor};
use crate::dataset::{WindowedDataset, WINDOW};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Straight-through clip window for every binarization.
pub const STE_CLIP: f64 = 1.0;
const CLASSES: usize = 2;
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Bcnn,
    Fcnn,
    Threshold,
}

impl ModelKind {
    pub const ALL: [Self; 4] = [Self::Cnn, Self::Bcnn, Self::Fcnn, Self::Threshold];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::Bcnn => "bcnn",
            Self::Fcnn => "fcnn",
            Self::Threshold => "threshold",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown model `{s}` (expected cnn, bcnn, fcnn or threshold)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Real convolutions carry a bias; binary ones stay integer-valued and
    /// read `+1` at padded positions.
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
        binary: bool,
    },
    BatchNorm,
    LeakyRelu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Binarize,
    Flatten,
    /// Binary dense layers have no bias and are scaled by `1/fan_in`.
    Dense {
        out: usize,
        binary: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    /// Two conv blocks (8 then 16 kernels of size 3), each followed by
    /// batch norm, Leaky-ReLU and a 2× pool, then a dense output layer.
    pub fn cnn(seed: u64) -> Self {
        use LayerSpec::*;
        let mut layers = Vec::new();
        for out_channels in [8, 16] {
            layers.extend([
                Conv {
                    out_channels,
                    kernel: 3,
                    padding: 1,
                    binary: false,
                },
                BatchNorm,
                LeakyRelu,
                MaxPool { window: 2, stride: 2 },
            ]);
        }
        layers.extend([Flatten, Dense { out: CLASSES, binary: false }]);
        Self {
            kind: ModelKind::Cnn,
            layers,
            seed,
        }
    }

    /// Three binarized blocks (48, 64, 72 kernels of size 5) on binarized
    /// input; pooling after the first two blocks only.
    pub fn bcnn(seed: u64) -> Self {
        use LayerSpec::*;
        let mut layers = vec![Binarize];
        for (i, out_channels) in [48, 64, 72].into_iter().enumerate() {
            layers.extend([
                Conv {
                    out_channels,
                    kernel: 5,
                    padding: 2,
                    binary: true,
                },
                BatchNorm,
                LeakyRelu,
            ]);
            if i < 2 {
                layers.push(MaxPool { window: 2, stride: 2 });
            }
            layers.push(Binarize);
        }
        layers.extend([Flatten, Dense { out: CLASSES, binary: true }]);
        Self {
            kind: ModelKind::Bcnn,
            layers,
            seed,
        }
    }

    /// Fully connected reference: 16 → 56 → 60 → 64 → 52 → 2.
    pub fn fcnn(seed: u64) -> Self {
        use LayerSpec::*;
        let mut layers = vec![Flatten];
        for out in [56, 60, 64, 52] {
            layers.extend([Dense { out, binary: false }, LeakyRelu]);
        }
        layers.push(Dense { out: CLASSES, binary: false });
        Self {
            kind: ModelKind::Fcnn,
            layers,
            seed,
        }
    }

    pub fn threshold() -> Self {
        Self {
            kind: ModelKind::Threshold,
            layers: Vec::new(),
            seed: 0,
        }
    }

    pub fn preset(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Cnn => Self::cnn(seed),
            ModelKind::Bcnn => Self::bcnn(seed),
            ModelKind::Fcnn => Self::fcnn(seed),
            ModelKind::Threshold => Self::threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
enum Layer {
    Conv {
        kernels: Tensor,
        bias: Option<Tensor>,
        padding: usize,
        binary: bool,
    },
    BatchNorm(BatchNormState),
    LeakyRelu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Binarize,
    Flatten,
    Dense {
        weights: Tensor,
        bias: Option<Tensor>,
        binary: bool,
    },
}

/// A network built from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

/// Vars recorded by one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Parameter leaves, in [`Model::params_mut`] order.
    pub params: Vec<Var>,
}

/// Checks layer dimensions and builds a freshly initialized model.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    Model::new(spec.clone())
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let mut rng = rng::stream(spec.seed, 10);
        let mut shape = Shape::Seq { channels: 1, len: WINDOW };
        let mut signed = false;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let err = |msg: String| Error::Spec(format!("layer {i} ({ls:?}): {msg}"));
            let layer = match (*ls, shape) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        padding,
                        binary,
                    },
                    Shape::Seq { channels, len },
                ) => {
                    if out_channels == 0 || kernel == 0 {
                        return Err(err("empty kernel set".into()));
                    }
                    if binary && !signed {
                        return Err(err("binary convolution needs binarized input".into()));
                    }
                    let geom = ConvGeometry {
                        padding,
                        stride: 1,
                        pad_value: 0.0,
                    };
                    let out_len = geom.output_len(len, kernel).map_err(|e| err(e.to_string()))?;
                    shape = Shape::Seq {
                        channels: out_channels,
                        len: out_len,
                    };
                    let mut kernels =
                        kaiming_normal(vec![out_channels, channels, kernel], channels * kernel, LEAKY_SLOPE, &mut rng);
                    if binary {
                        clamp_latent(&mut kernels);
                    }
                    Layer::Conv {
                        kernels,
                        bias: (!binary).then(|| Tensor::zeros(vec![out_channels])),
                        padding,
                        binary,
                    }
                }
                (LayerSpec::BatchNorm, Shape::Seq { channels, .. }) => {
                    Layer::BatchNorm(BatchNormState::new(channels))
                }
                (LayerSpec::LeakyRelu, _) => Layer::LeakyRelu,
                (LayerSpec::MaxPool { window, stride }, Shape::Seq { channels, len }) => {
                    if window == 0 || stride == 0 || window > len {
                        return Err(err(format!("cannot pool length {len}")));
                    }
                    shape = Shape::Seq {
                        channels,
                        len: (len - window) / stride + 1,
                    };
                    Layer::MaxPool { window, stride }
                }
                (LayerSpec::Binarize, _) => Layer::Binarize,
                (LayerSpec::Flatten, Shape::Seq { channels, len }) => {
                    shape = Shape::Flat(channels * len);
                    Layer::Flatten
                }
                (LayerSpec::Dense { out, binary }, Shape::Flat(d_in)) => {
                    if out == 0 {
                        return Err(err("zero outputs".into()));
                    }
                    if binary && !signed {
                        return Err(err("binary dense needs binarized input".into()));
                    }
                    shape = Shape::Flat(out);
                    let mut weights = kaiming_normal(vec![d_in, out], d_in, LEAKY_SLOPE, &mut rng);
                    if binary {
                        clamp_latent(&mut weights);
                    }
                    Layer::Dense {
                        weights,
                        bias: (!binary).then(|| Tensor::zeros(vec![out])),
                        binary,
                    }
                }
                (_, s) => return Err(err(format!("does not accept input of shape {s:?}"))),
            };
            signed = match ls {
                LayerSpec::Binarize => true,
                LayerSpec::Flatten => signed,
                _ => false,
            };
            layers.push(layer);
        }
        match (spec.kind, shape) {
            (ModelKind::Threshold, _) if layers.is_empty() => {}
            (ModelKind::Threshold, _) => return Err(Error::Spec("threshold model has no layers".into())),
            (_, Shape::Flat(CLASSES)) => {}
            (_, s) => return Err(Error::Spec(format!("network must end in {CLASSES} logits, ends in {s:?}"))),
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn is_trainable(&self) -> bool {
        self.kind() != ModelKind::Threshold
    }

    /// Trainable parameters in a fixed order: per layer, kernels/weights
    /// then bias, or gamma then beta.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { kernels, bias, .. } => {
                    out.push(kernels);
                    out.extend(bias.as_mut());
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push(weights);
                    out.extend(bias.as_mut());
                }
                Layer::BatchNorm(s) => {
                    out.push(&mut s.gamma);
                    out.push(&mut s.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Read-only view of [`Model::params_mut`].
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { kernels, bias, .. } => {
                    out.push(kernels);
                    out.extend(bias.as_ref());
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push(weights);
                    out.extend(bias.as_ref());
                }
                Layer::BatchNorm(s) => {
                    out.push(&s.gamma);
                    out.push(&s.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Human-readable names matching [`Model::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { bias, .. } => {
                    out.push(format!("conv{i}.kernels"));
                    if bias.is_some() {
                        out.push(format!("conv{i}.bias"));
                    }
                }
                Layer::Dense { bias, .. } => {
                    out.push(format!("dense{i}.weights"));
                    if bias.is_some() {
                        out.push(format!("dense{i}.bias"));
                    }
                }
                Layer::BatchNorm(_) => {
                    out.push(format!("bn{i}.gamma"));
                    out.push(format!("bn{i}.beta"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Hash of every parameter and running statistic, bit-exact.
    pub fn param_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for layer in &self.layers {
            let mut feed = |v: &[f64]| v.iter().for_each(|x| x.to_bits().hash(&mut h));
            match layer {
                Layer::Conv { kernels, bias, .. } | Layer::Dense { weights: kernels, bias, .. } => {
                    feed(kernels.values());
                    if let Some(b) = bias {
                        feed(b.values());
                    }
                }
                Layer::BatchNorm(s) => {
                    feed(s.gamma.values());
                    feed(s.beta.values());
                    feed(&s.running_mean);
                    feed(&s.running_var);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Records a forward pass of `input` (`[B, 1, 16]`) on `tape`.
    ///
    /// `sign` selects the binarization forward: [`SignMode::Sign`] for
    /// training and inference, [`SignMode::HardTanh`] for the smooth
    /// surrogate used in gradient checks.
    pub fn record(&mut self, tape: &mut Tape, input: Tensor, mode: NormMode, sign: SignMode) -> Result<Forward> {
        if !self.is_trainable() {
            return Err(Error::Spec("threshold model has no network to record".into()));
        }
        let mut x = tape.leaf(input)?;
        let mut params = Vec::new();
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv {
                    kernels,
                    bias,
                    padding,
                    binary,
                } => {
                    let mut k = tape.leaf(kernels.clone())?;
                    params.push(k);
                    let b = match bias {
                        Some(b) => {
                            let v = tape.leaf(b.clone())?;
                            params.push(v);
                            Some(v)
                        }
                        None => None,
                    };
                    if *binary {
                        k = tape.binarize(k, sign, STE_CLIP)?;
                    }
                    let geom = ConvGeometry {
                        padding: *padding,
                        stride: 1,
                        pad_value: if *binary { 1.0 } else { 0.0 },
                    };
                    tape.conv1d(x, k, b, geom)?
                }
                Layer::BatchNorm(state) => {
                    let g = tape.leaf(state.gamma.clone())?;
                    let b = tape.leaf(state.beta.clone())?;
                    params.extend([g, b]);
                    state.mode = mode;
                    tape.batch_norm(x, g, b, state)?
                }
                Layer::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE)?,
                Layer::MaxPool { window, stride } => tape.max_pool(x, *window, *stride)?,
                Layer::Binarize => tape.binarize(x, sign, STE_CLIP)?,
                Layer::Flatten => tape.flatten(x)?,
                Layer::Dense { weights, bias, binary } => {
                    let mut w = tape.leaf(weights.clone())?;
                    params.push(w);
                    let b = match bias {
                        Some(b) => {
                            let v = tape.leaf(b.clone())?;
                            params.push(v);
                            Some(v)
                        }
                        None => None,
                    };
                    if *binary {
                        w = tape.binarize(w, sign, STE_CLIP)?;
                    }
                    let y = tape.dense(x, w, b)?;
                    if *binary {
                        let fan_in = weights.shape()[0] as f64;
                        tape.scale(y, 1.0 / fan_in)?
                    } else {
                        y
                    }
                }
            };
        }
        Ok(Forward { logits: x, params })
    }

    /// One Adam step on a batch. Returns the batch loss before the update.
    pub fn train_step(&mut self, input: Tensor, labels: &[usize], adam: &mut AdamState) -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = self.record(&mut tape, input, NormMode::Train, SignMode::Sign)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, labels)?;
        let loss_value = tape.value(loss).values()[0];
        if !loss_value.is_finite() {
            return Err(Error::NumericDomain("loss"));
        }
        tape.backward(loss)?;
        let mut params = self.params_mut();
        for (p, &v) in params.iter_mut().zip(&fwd.params) {
            let g = tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec);
            p.set_grad(g)?;
        }
        adam_step(&mut params, adam)?;
        for p in &mut params {
            p.clear_grad();
        }
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { kernels: w, binary: true, .. } | Layer::Dense { weights: w, binary: true, .. } => {
                    clamp_latent(w)
                }
                _ => {}
            }
        }
        Ok(loss_value)
    }

    /// Inference-mode logits `[B, 2]` in double precision, evaluated
    /// layer by layer without a tape.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut shape = input.shape().to_vec();
        let mut x = input.values().to_vec();
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    kernels,
                    bias,
                    padding,
                    binary,
                } => {
                    let geom = ConvGeometry {
                        padding: *padding,
                        stride: 1,
                        pad_value: if *binary { 1.0 } else { 0.0 },
                    };
                    let k = if *binary { signs_of(kernels) } else { kernels.values().to_vec() };
                    let d = ConvDims::resolve(&shape, kernels.shape(), &geom)?;
                    x = ops::conv1d_raw(&x, &k, bias.as_ref().map(Tensor::values), &d, &geom).0;
                    shape = vec![d.batch, d.n_out, d.out_len];
                }
                Layer::BatchNorm(state) => x = batch_norm_infer(&x, &shape, state)?,
                Layer::LeakyRelu => x.iter_mut().for_each(|v| *v = ops::leaky_relu(*v, LEAKY_SLOPE)),
                Layer::MaxPool { window, stride } => {
                    let (out, _, out_len) = ops::max_pool_raw(&x, [shape[0], shape[1], shape[2]], *window, *stride)?;
                    x = out;
                    shape[2] = out_len;
                }
                Layer::Binarize => x.iter_mut().for_each(|v| *v = binary::msb_unchecked(*v)),
                Layer::Flatten => shape = vec![shape[0], shape[1..].iter().product()],
                Layer::Dense { weights, bias, binary } => {
                    let [d_in, d_out] = [weights.shape()[0], weights.shape()[1]];
                    let w = if *binary { signs_of(weights) } else { weights.values().to_vec() };
                    x = ops::dense_raw(&x, &w, bias.as_ref().map(Tensor::values), shape[0], d_in, d_out);
                    if *binary {
                        let fan_in = d_in as f64;
                        x.iter_mut().for_each(|v| *v /= fan_in);
                    }
                    shape = vec![shape[0], d_out];
                }
            }
        }
        Tensor::new(shape, x)
    }

    /// Hard decisions for every window of `dataset`. Binarized networks
    /// run on the packed XNOR/popcount path.
    pub fn predict(&self, dataset: &WindowedDataset) -> Result<Vec<u8>> {
        match self.kind() {
            ModelKind::Threshold => Ok(threshold_decisions(dataset)),
            _ if self.is_fully_binary() => self.predict_with(dataset, |m, x| m.packed_logits(x)),
            _ => self.predict_with(dataset, |m, x| m.logits(x).map(Tensor::into_values)),
        }
    }

    /// [`Model::predict`] through the double-precision reference path.
    pub fn predict_reference(&self, dataset: &WindowedDataset) -> Result<Vec<u8>> {
        if self.kind() == ModelKind::Threshold {
            return Ok(threshold_decisions(dataset));
        }
        self.predict_with(dataset, |m, x| m.logits(x).map(Tensor::into_values))
    }

    /// [`Model::predict`] in single precision. Binary layers are not
    /// supported on this path.
    pub fn predict_f32(&self, dataset: &WindowedDataset) -> Result<Vec<u8>> {
        if self.kind() == ModelKind::Threshold {
            return Ok(threshold_decisions(dataset));
        }
        self.predict_with(dataset, |m, x| m.logits_f32(x))
    }

    fn predict_with<F>(&self, dataset: &WindowedDataset, logits: F) -> Result<Vec<u8>>
    where
        F: Fn(&Self, &Tensor) -> Result<Vec<f64>>,
    {
        if dataset.is_empty() {
            return Err(Error::Size("cannot predict on an empty dataset".into()));
        }
        let mut out = Vec::with_capacity(dataset.len());
        let idx: Vec<usize> = (0..dataset.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, _) = dataset.batch(chunk)?;
            let z = logits(self, &x)?;
            out.extend(z.chunks_exact(CLASSES).map(|row| decide(row[0], row[1])));
        }
        Ok(out)
    }

    /// True when every conv and dense layer is binarized.
    pub fn is_fully_binary(&self) -> bool {
        let mut any = false;
        for layer in &self.layers {
            match layer {
                Layer::Conv { binary, .. } | Layer::Dense { binary, .. } => {
                    if !binary {
                        return false;
                    }
                    any = true;
                }
                _ => {}
            }
        }
        any
    }

    /// Inference-mode logits with every binary layer evaluated on packed
    /// sign bits. Batch norm, Leaky-ReLU and pooling run on the exact
    /// integer conv outputs, so the result equals [`Model::logits`].
    fn packed_logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        enum Act {
            Real(Vec<f64>, Vec<usize>),
            /// Channels-last `[B, L, C]` bits.
            Packed(PackedBits),
        }
        let mut act = Act::Real(input.values().to_vec(), input.shape().to_vec());
        for layer in &self.layers {
            act = match (layer, act) {
                (Layer::Binarize, Act::Real(x, shape)) if shape.len() == 3 => {
                    let signs: Vec<i8> = x.iter().map(|&v| binary::msb_unchecked(v) as i8).collect();
                    Act::Packed(binary::pack_activations(&SignTensor::new(shape, signs)?)?)
                }
                (Layer::Conv { kernels, padding, binary: true, .. }, Act::Packed(p)) => {
                    let k = binary::pack_kernels(&binary::binarize(kernels)?)?;
                    let out = binary_conv1d_packed(&p, &k, *padding, 1)?;
                    Act::Real(out.values.iter().map(|&v| f64::from(v)).collect(), out.shape)
                }
                (Layer::BatchNorm(state), Act::Real(x, shape)) => {
                    Act::Real(batch_norm_infer(&x, &shape, state)?, shape)
                }
                (Layer::LeakyRelu, Act::Real(mut x, shape)) => {
                    x.iter_mut().for_each(|v| *v = ops::leaky_relu(*v, LEAKY_SLOPE));
                    Act::Real(x, shape)
                }
                (Layer::MaxPool { window, stride }, Act::Real(x, mut shape)) => {
                    let (out, _, out_len) = ops::max_pool_raw(&x, [shape[0], shape[1], shape[2]], *window, *stride)?;
                    shape[2] = out_len;
                    Act::Real(out, shape)
                }
                (Layer::Flatten, Act::Packed(p)) => {
                    // Reorder channels-last bits into the [C·L] order the
                    // dense weights expect.
                    let [b, l, c] = [p.shape()[0], p.shape()[1], p.shape()[2]];
                    let s = binary::unpack(&p);
                    let mut flat = Vec::with_capacity(s.len());
                    for bi in 0..b {
                        for ci in 0..c {
                            flat.extend((0..l).map(|li| s.signs()[(bi * l + li) * c + ci]));
                        }
                    }
                    Act::Packed(binary::pack(&SignTensor::new(vec![b, c * l], flat)?))
                }
                (Layer::Dense { weights, binary: true, .. }, Act::Packed(p)) => {
                    let [d_in, d_out] = [weights.shape()[0], weights.shape()[1]];
                    let w = weights.values();
                    let mut t = Vec::with_capacity(w.len());
                    for j in 0..d_out {
                        t.extend((0..d_in).map(|i| binary::msb_unchecked(w[i * d_out + j]) as i8));
                    }
                    let wt = binary::pack(&SignTensor::new(vec![d_out, d_in], t)?);
                    let out = binary_dense_packed(&p, &wt)?;
                    let fan_in = d_in as f64;
                    Act::Real(out.values.iter().map(|&v| f64::from(v) / fan_in).collect(), out.shape)
                }
                (layer, _) => {
                    return Err(Error::Spec(format!(
                        "packed inference cannot evaluate {layer:?} at this position"
                    )))
                }
            };
        }
        match act {
            Act::Real(x, _) => Ok(x),
            Act::Packed(_) => Err(Error::Spec("network ends in packed bits".into())),
        }
    }

    fn logits_f32(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut shape = input.shape().to_vec();
        let mut x: Vec<f32> = input.values().iter().map(|&v| v as f32).collect();
        let slope = LEAKY_SLOPE as f32;
        for layer in &self.layers {
            match layer {
                Layer::Conv { binary: true, .. } | Layer::Dense { binary: true, .. } | Layer::Binarize => {
                    return Err(Error::Spec("single-precision path has no binary layers".into()))
                }
                Layer::Conv { kernels, bias, padding, .. } => {
                    let [n, c, f] = [kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]];
                    let [b, l] = [shape[0], shape[2]];
                    let k: Vec<f32> = kernels.values().iter().map(|&v| v as f32).collect();
                    let out_len = l + 2 * padding - f + 1;
                    let mut y = vec![0f32; b * n * out_len];
                    for bi in 0..b {
                        for o in 0..n {
                            let b0 = bias.as_ref().map_or(0.0, |t| t.values()[o] as f32);
                            for t in 0..out_len {
                                let mut acc = b0;
                                for ci in 0..c {
                                    for fi in 0..f {
                                        let pos = (t + fi) as isize - *padding as isize;
                                        if (0..l as isize).contains(&pos) {
                                            acc += x[(bi * c + ci) * l + pos as usize] * k[(o * c + ci) * f + fi];
                                        }
                                    }
                                }
                                y[(bi * n + o) * out_len + t] = acc;
                            }
                        }
                    }
                    x = y;
                    shape = vec![b, n, out_len];
                }
                Layer::BatchNorm(s) => {
                    let [b, c, l] = [shape[0], shape[1], shape[2]];
                    for bi in 0..b {
                        for ci in 0..c {
                            let inv = 1.0 / ((s.running_var[ci] + s.epsilon) as f32).sqrt();
                            let (g, be, m) = (s.gamma.values()[ci] as f32, s.beta.values()[ci] as f32, s.running_mean[ci] as f32);
                            for v in &mut x[(bi * c + ci) * l..][..l] {
                                *v = g * (*v - m) * inv + be;
                            }
                        }
                    }
                }
                Layer::LeakyRelu => x.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= slope
                    }
                }),
                Layer::MaxPool { window, stride } => {
                    let [b, c, l] = [shape[0], shape[1], shape[2]];
                    let out_len = (l - window) / stride + 1;
                    let mut y = Vec::with_capacity(b * c * out_len);
                    for row in x.chunks_exact(l) {
                        for j in 0..out_len {
                            y.push(row[j * stride..][..*window].iter().copied().fold(f32::NEG_INFINITY, f32::max));
                        }
                    }
                    x = y;
                    shape[2] = out_len;
                }
                Layer::Flatten => shape = vec![shape[0], shape[1..].iter().product()],
                Layer::Dense { weights, bias, .. } => {
                    let [d_in, d_out] = [weights.shape()[0], weights.shape()[1]];
                    let w: Vec<f32> = weights.values().iter().map(|&v| v as f32).collect();
                    let mut y = Vec::with_capacity(shape[0] * d_out);
                    for row in x.chunks_exact(d_in) {
                        for j in 0..d_out {
                            let mut acc = bias.as_ref().map_or(0.0, |t| t.values()[j] as f32);
                            for i in 0..d_in {
                                acc += row[i] * w[i * d_out + j];
                            }
                            y.push(acc);
                        }
                    }
                    x = y;
                    shape = vec![shape[0], d_out];
                }
            }
        }
        Ok(x.into_iter().map(f64::from).collect())
    }
}

fn batch_norm_infer(x: &[f64], shape: &[usize], state: &BatchNormState) -> Result<Vec<f64>> {
    let mut s = state.clone();
    s.mode = NormMode::Infer;
    let dims = [shape[0], shape[1], shape[2]];
    Ok(ops::batch_norm_raw(x, dims, state.gamma.values(), state.beta.values(), &mut s)?.0)
}

fn signs_of(t: &Tensor) -> Vec<f64> {
    t.values().iter().map(|&v| binary::msb_unchecked(v)).collect()
}

fn clamp_latent(t: &mut Tensor) {
    t.values_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

/// Class decision from two logits; ties go to class 0.
fn decide(z0: f64, z1: f64) -> u8 {
    u8::from(z1 > z0)
}

/// Sign of the decided sample with the centering offset added back.
pub(crate) fn threshold_decisions(dataset: &WindowedDataset) -> Vec<u8> {
    let at = dataset.decide_offset();
    (0..dataset.len())
        .map(|i| u8::from(dataset.window(i)[at] + dataset.center >= 0.0))
        .collect()
}
