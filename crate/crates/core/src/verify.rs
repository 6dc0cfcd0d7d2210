//! Self-checks run by `rofdecide verify`: finite-difference gradient
//! checks of every preset, kernel equivalences against nested-loop
//! oracles, loss sanity, and channel invariants.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::gradcheck::{check_gradients, GradCheckOptions, TensorReport};
use crate::autodiff::{conv1d_forward, dense_forward, softmax_cross_entropy, ConvParams, NormMode, SignMode};
use crate::binary::{
    binary_conv1d, binary_conv1d_packed, pack, pack_activations, pack_kernels, xnor_popcount_dot, SignTensor,
};
use crate::dataset;
use crate::error::Result;
use crate::harness::{build_model, hard_decision_baseline, ModelKind, ModelSpec};
use crate::link::{self, ChannelConfig, DistancePreset};
use crate::rng;
use crate::tensor::Tensor;

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Record analytic gradients with a deliberately wrong conv backward.
    pub inject_fault: bool,
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            inject_fault: false,
            batches: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Per-tensor gradient errors, for gradient checks only.
    pub layers: Vec<TensorReport>,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
            layers: Vec::new(),
        }
    }
}

/// Runs every check in order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = vec![conv_oracle(100, opts.seed)?, dense_oracle(100, opts.seed)?, loss_sanity()?];
    for kind in [ModelKind::Cnn, ModelKind::Bcnn, ModelKind::Fcnn] {
        out.push(gradient_check(kind, opts)?);
    }
    out.push(binary_kernel_cases(1000, opts.seed)?);
    out.push(dot_identity_exhaustive(16)?);
    out.push(channel_invariants()?);
    Ok(out)
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn random_signs(rng: &mut impl Rng, shape: Vec<usize>) -> SignTensor {
    let n = shape.iter().product();
    SignTensor::new(shape, (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()).expect("shape matches")
}

/// Conv forward against a direct nested-loop sum with zero padding.
pub fn conv_oracle(draws: usize, seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, 40);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (b, c, l, n, f): (usize, usize, usize, usize, usize) = (
            rng.gen_range(1..4),
            rng.gen_range(1..6),
            rng.gen_range(1..20),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let padding = rng.gen_range(0..3usize).max(f.saturating_sub(l).div_ceil(2));
        let x = uniform(&mut rng, vec![b, c, l]);
        let params = ConvParams {
            kernels: uniform(&mut rng, vec![n, c, f]),
            bias: Some(uniform(&mut rng, vec![n])),
            padding,
            stride: 1,
        };
        let y = conv1d_forward(&x, &params)?;
        let out_len = l + 2 * padding - f + 1;
        let (xv, kv, bv) = (x.values(), params.kernels.values(), params.bias.as_ref().expect("set").values());
        for bi in 0..b {
            for o in 0..n {
                for t in 0..out_len {
                    let mut acc = bv[o];
                    for ci in 0..c {
                        for fi in 0..f {
                            let pos = (t + fi) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < l {
                                acc += xv[(bi * c + ci) * l + pos as usize] * kv[(o * c + ci) * f + fi];
                            }
                        }
                    }
                    worst = worst.max((acc - y.values()[(bi * n + o) * out_len + t]).abs());
                }
            }
        }
    }
    Ok(Check::new("conv forward vs nested loops", worst < 1e-12, format!("{draws} draws, max abs diff {worst:.1e}")))
}

/// Dense forward against a direct nested-loop sum.
pub fn dense_oracle(draws: usize, seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, 41);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (b, d, k) = (rng.gen_range(1..6), rng.gen_range(1..70), rng.gen_range(1..8));
        let x = uniform(&mut rng, vec![b, d]);
        let w = uniform(&mut rng, vec![d, k]);
        let bias = uniform(&mut rng, vec![k]);
        let y = dense_forward(&x, &w, &bias)?;
        for bi in 0..b {
            for j in 0..k {
                let acc = bias.values()[j] + (0..d).map(|i| x.values()[bi * d + i] * w.values()[i * k + j]).sum::<f64>();
                worst = worst.max((acc - y.values()[bi * k + j]).abs());
            }
        }
    }
    Ok(Check::new("dense forward vs nested loops", worst < 1e-12, format!("{draws} draws, max abs diff {worst:.1e}")))
}

/// Uniform logits give a loss of exactly ln 2 and softmax rows sum to one.
pub fn loss_sanity() -> Result<Check> {
    let labels = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])?;
    let (loss, _) = softmax_cross_entropy(&Tensor::filled(vec![4, 2], 0.37), &labels)?;
    let loss_err = (loss - std::f64::consts::LN_2).abs();
    let mut rng = rng::stream(0, 42);
    let mut row_err = 0.0f64;
    for _ in 0..100 {
        let logits = Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-30.0..30.0)).collect())?;
        let (_, probs) = softmax_cross_entropy(&logits, &labels)?;
        for row in probs.values().chunks(2) {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(Check::new(
        "loss sanity",
        loss_err < 1e-12 && row_err < 1e-12,
        format!("|loss - ln 2| = {loss_err:.1e}, max |row sum - 1| = {row_err:.1e}"),
    ))
}

/// Central-difference gradient check of one preset over several random
/// batches of received windows. BCNN runs its hard-tanh surrogate, whose
/// exact derivative is the straight-through estimator.
pub fn gradient_check(kind: ModelKind, opts: &VerifyOptions) -> Result<Check> {
    let mut base = build_model(&ModelSpec::preset(kind, opts.seed))?;
    if kind == ModelKind::Bcnn {
        // Keep latents off the clip boundary so ±h never crosses it.
        for p in base.params_mut() {
            if p.rank() > 1 {
                p.values_mut().iter_mut().for_each(|v| *v *= 0.9);
            }
        }
    }
    let names = base.param_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let params: Vec<Tensor> = base.params().into_iter().cloned().collect();
    let channel = ChannelConfig::preset(DistancePreset::D10km);
    let mut data = dataset::generate(&channel, 4000, -17.75, rng::derive_seed(opts.seed, 300))?;
    data.apply_center(data.sample_mean());
    let gc = GradCheckOptions {
        max_entries: (kind == ModelKind::Bcnn).then_some(400),
        seed: opts.seed,
        faulty_conv: opts.inject_fault,
        ..GradCheckOptions::default()
    };

    let mut merged: Vec<TensorReport> = Vec::new();
    let mut sampler = rng::stream(opts.seed, 43);
    let mut redraws = 0;
    for _ in 0..opts.batches {
        let mut attempt = 0;
        let report = loop {
            let idx = sample(&mut sampler, data.len(), opts.batch_size).into_vec();
            let (x, labels) = data.batch(&idx)?;
            let build = |tape: &mut crate::autodiff::Tape, values: &[Tensor]| {
                let mut m = base.clone();
                for (p, v) in m.params_mut().into_iter().zip(values) {
                    *p = v.clone();
                }
                let fwd = m.record(tape, x.clone(), NormMode::Train, SignMode::HardTanh)?;
                let loss = tape.softmax_cross_entropy(fwd.logits, &labels)?;
                Ok((loss, fwd.params))
            };
            let report = check_gradients(&name_refs, &params, build, &gc)?;
            attempt += 1;
            if report.kink_crossings == 0 || attempt == 10 {
                break report;
            }
            redraws += 1;
        };
        if merged.is_empty() {
            merged = report.tensors;
        } else {
            for (m, t) in merged.iter_mut().zip(report.tensors) {
                m.checked += t.checked;
                m.skipped += t.skipped;
                m.max_rel_error = m.max_rel_error.max(t.max_rel_error);
            }
        }
    }
    let worst = merged.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    // A conv bias feeding batch norm has an identically zero gradient, so
    // a tensor may have no checkable entries.
    let checked: usize = merged.iter().map(|t| t.checked).sum();
    let passed = worst < GRAD_TOLERANCE && checked > 0;
    Ok(Check {
        name: format!("{kind} gradients"),
        passed,
        detail: format!(
            "{} batches of {}, {checked} entries, max rel error {worst:.2e}, {redraws} redraws",
            opts.batches, opts.batch_size
        ),
        layers: merged,
    })
}

/// Pads `[B, C, L]` signs with `padding` columns of `+1` on both sides.
fn pad_plus_one(x: &SignTensor, padding: usize) -> Result<SignTensor> {
    let [b, c, l] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let lp = l + 2 * padding;
    let mut out = vec![1i8; b * c * lp];
    for row in 0..b * c {
        out[row * lp + padding..row * lp + padding + l].copy_from_slice(&x.signs()[row * l..(row + 1) * l]);
    }
    SignTensor::new(vec![b, c, lp], out)
}

/// Naive `±1` convolution, real-arithmetic convolution of the same values
/// (with explicit `+1` padding), and packed XNOR/popcount must agree.
pub fn binary_kernel_cases(cases: usize, seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, 44);
    let mut mismatches = 0;
    for _ in 0..cases {
        let (b, c, n, f): (usize, usize, usize, usize) = (rng.gen_range(1..4), rng.gen_range(1..150), rng.gen_range(1..5), rng.gen_range(1..8));
        let l: usize = rng.gen_range(1..20);
        let padding = rng.gen_range(0..4usize).max(f.saturating_sub(l).div_ceil(2));
        let x = random_signs(&mut rng, vec![b, c, l]);
        let k = random_signs(&mut rng, vec![n, c, f]);
        let naive = binary_conv1d(&x, &k, padding, 1)?;
        let packed = binary_conv1d_packed(&pack_activations(&x)?, &pack_kernels(&k)?, padding, 1)?;
        let real = conv1d_forward(
            &pad_plus_one(&x, padding)?.to_tensor(),
            &ConvParams {
                kernels: k.to_tensor(),
                bias: None,
                padding: 0,
                stride: 1,
            },
        )?;
        let real_matches = naive.values.iter().zip(real.values()).all(|(&a, &r)| f64::from(a) == r);
        if naive != packed || !real_matches || naive.values.len() != real.len() {
            mismatches += 1;
        }
    }
    Ok(Check::new("binary conv: naive = real = packed", mismatches == 0, format!("{cases} cases, {mismatches} mismatches")))
}

/// `xnor_popcount_dot` equals the `±1` dot product for every pair of
/// vectors of every length up to `max_n`. The reference walks `b` in Gray
/// code order and updates the sum one flipped element at a time.
pub fn dot_identity_exhaustive(max_n: usize) -> Result<Check> {
    let mut pairs = 0u64;
    let mut mismatches = 0u64;
    for n in 1..=max_n.min(63) {
        let count = 1u64 << n;
        for a in 0..count {
            // b = 0 encodes all −1; its dot with a is (#−1 in a) − (#+1 in a).
            let plus = a.count_ones() as i64;
            let mut dot = (n as i64 - plus) - plus;
            let mut b = 0u64;
            for step in 0..count {
                if step > 0 {
                    let j = step.trailing_zeros();
                    let a_j = if a >> j & 1 == 1 { 1 } else { -1 };
                    let b_j_old = if b >> j & 1 == 1 { 1 } else { -1 };
                    dot -= 2 * a_j * b_j_old;
                    b ^= 1 << j;
                }
                if xnor_popcount_dot(&[a], &[b], n)? != dot {
                    mismatches += 1;
                }
                pairs += 1;
            }
        }
    }
    Ok(Check::new(
        "xnor/popcount dot identity (exhaustive)",
        mismatches == 0,
        format!("n ≤ {max_n}, {pairs} pairs, {mismatches} mismatches"),
    ))
}

/// Clean chain decodes perfectly, eyes close with distance, and noisy
/// threshold BER falls with power.
pub fn channel_invariants() -> Result<Check> {
    let mut failures = Vec::new();
    let mut eyes = Vec::new();
    for d in DistancePreset::ALL {
        let cfg = ChannelConfig::preset(d);
        let clean = dataset::generate(&cfg, 5000, f64::INFINITY, 5)?;
        if hard_decision_baseline(&clean)?.errors != 0 {
            failures.push(format!("{d}: clean chain has errors"));
        }
        eyes.push(link::eye_opening(&link::simulate_link(&cfg, 5000, f64::INFINITY, 5)?));
    }
    if !(eyes[0] > eyes[1] && eyes[1] > eyes[2] && eyes[2] > 0.0) {
        failures.push(format!("eye openings not ordered: {eyes:?}"));
    }
    let cfg = ChannelConfig::preset(DistancePreset::D15km);
    let lo = link::threshold_errors(&link::simulate_link(&cfg, 100_000, cfg.power_grid_dbm[0], 6)?);
    let hi = link::threshold_errors(&link::simulate_link(&cfg, 100_000, cfg.power_grid_dbm[7], 6)?);
    if hi >= lo {
        failures.push(format!("threshold errors do not fall with power ({lo} → {hi})"));
    }
    let passed = failures.is_empty();
    let detail = if passed {
        format!("eye openings {:.3} > {:.3} > {:.3}", eyes[0], eyes[1], eyes[2])
    } else {
        failures.join("; ")
    };
    Ok(Check::new("channel invariants", passed, detail))
}

/// Packs random sign vectors and compares popcount dots to integer sums.
pub fn popcount_random(pairs: usize, max_n: usize, seed: u64) -> Result<Check> {
    let mut rng = rng::stream(seed, 45);
    let mut mismatches = 0;
    for _ in 0..pairs {
        let n = rng.gen_range(1..=max_n);
        let a = random_signs(&mut rng, vec![n]);
        let b = random_signs(&mut rng, vec![n]);
        let expect: i64 = a.signs().iter().zip(b.signs()).map(|(&x, &y)| i64::from(x * y)).sum();
        if xnor_popcount_dot(pack(&a).words(), pack(&b).words(), n)? != expect {
            mismatches += 1;
        }
    }
    Ok(Check::new("popcount dot vs integer sum", mismatches == 0, format!("{pairs} pairs, {mismatches} mismatches")))
}
