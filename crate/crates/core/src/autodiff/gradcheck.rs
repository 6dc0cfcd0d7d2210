//! Central finite-difference verification of tape gradients.
//!
//! The finite-difference side only ever runs forward passes, so it shares
//! no code with the backward rules it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries whose analytic gradient is smaller than this are skipped.
    /// Rounding in the loss limits a central difference to roughly
    /// `1e-16 · |loss| / step` absolute, so smaller gradients cannot be
    /// resolved to the checked relative precision.
    pub min_magnitude: f64,
    /// Check at most this many entries per tensor (all when `None`).
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Record the analytic pass on [`Tape::with_faulty_conv_backward`].
    pub faulty_conv: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            min_magnitude: 1e-6,
            max_entries: None,
            seed: 0,
            faulty_conv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
    /// Perturbations that moved the forward pass onto a different smooth
    /// piece (a Leaky-ReLU side, pooling winner, or clip region changed).
    /// Such a draw is unusable; the caller should re-draw its inputs.
    pub kink_crossings: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients of the scalar built by `build` against
/// central differences, for every tensor in `params`.
///
/// `build` records a forward pass over the given parameter values and
/// returns the loss together with the leaf of each parameter (same order).
pub fn check_gradients<F>(
    names: &[&str],
    params: &[Tensor],
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = if opts.faulty_conv {
        Tape::with_faulty_conv_backward()
    } else {
        Tape::new()
    };
    let (loss, leaves) = build(&mut tape, params)?;
    let fingerprint = tape.branch_fingerprint();
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let eval = |values: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, values)?;
        Ok((tape.value(loss).values()[0], tape.branch_fingerprint()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    let mut kink_crossings = 0;
    for (t, grad) in analytic.iter().enumerate() {
        let len = params[t].len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < len => {
                let mut e = sample(&mut rng, len, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..len).collect(),
        };
        let mut report = TensorReport {
            name: names.get(t).map_or_else(|| format!("param{t}"), |s| s.to_string()),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for i in entries {
            if grad[i].abs() < opts.min_magnitude {
                report.skipped += 1;
                continue;
            }
            let base = work[t].values()[i];
            work[t].values_mut()[i] = base + opts.step;
            let (plus, fp_plus) = eval(&work)?;
            work[t].values_mut()[i] = base - opts.step;
            let (minus, fp_minus) = eval(&work)?;
            work[t].values_mut()[i] = base;
            if fp_plus != fingerprint || fp_minus != fingerprint {
                kink_crossings += 1;
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(relative_error(grad[i], numeric));
        }
        tensors.push(report);
    }
    Ok(GradCheckReport {
        tensors,
        kink_crossings,
    })
}
