//! Baseband surrogate of the mm-wave radio-over-fiber link.
//!
//! The chain is `modulate → upsample_shape → apply_nonlinearity →
//! apply_isi → apply_awgn`. Symbol `k` sits at sample index `k·sps` of
//! every stage output; filter transients are trimmed so each waveform
//! holds exactly `symbol_count·sps` samples.

mod config;

pub use config::{Calibration, ChannelConfig, DistancePreset};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub const SAMPLES_PER_SYMBOL: usize = 4;
pub const ROLL_OFF: f64 = 0.5;
pub const PULSE_SPAN_SYMBOLS: usize = 8;
/// BER below which forward error correction yields error-free data.
pub const FEC_LIMIT: f64 = 3.8e-3;

const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sps: usize,
    pub symbol_count: usize,
    pub origin_bits: Vec<u8>,
}

impl Waveform {
    /// Samples at the symbol instants `k·sps`.
    pub fn symbol_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().step_by(self.sps).copied()
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sps: self.sps,
            symbol_count: self.symbol_count,
            origin_bits: self.origin_bits.clone(),
        }
    }
}

/// FIR pulse with the index of its reference tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub taps: Vec<f64>,
    pub delay: usize,
}

impl Pulse {
    /// Raised-cosine pulse spanning `span` symbols, unit peak, centered.
    pub fn raised_cosine(roll_off: f64, sps: usize, span: usize) -> Self {
        let half = (span * sps / 2) as isize;
        let taps: Vec<f64> = (-half..=half)
            .map(|i| {
                let t = i as f64 / sps as f64;
                let den = 1.0 - (2.0 * roll_off * t).powi(2);
                if den.abs() < 1e-12 {
                    std::f64::consts::FRAC_PI_4 * sinc(1.0 / (2.0 * roll_off))
                } else {
                    sinc(t) * (std::f64::consts::PI * roll_off * t).cos() / den
                }
            })
            .collect();
        let peak = taps.iter().copied().fold(f64::MIN, f64::max);
        Self {
            taps: taps.iter().map(|v| v / peak).collect(),
            delay: half as usize,
        }
    }

    /// Rectangular pulse of `sps` ones starting at the symbol instant.
    pub fn rectangular(sps: usize) -> Self {
        Self {
            taps: vec![1.0; sps],
            delay: 0,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// `n` uniform bits from the seeded generator.
pub fn random_bits(n: usize, seed: u64) -> Result<Vec<u8>> {
    if n == 0 {
        return Err(Error::Size("random_bits needs n ≥ 1".into()));
    }
    let mut rng = rng::stream(seed, 0);
    Ok((0..n).map(|_| u8::from(rng.gen::<bool>())).collect())
}

/// 2-PAM mapping: bit 0 → −1, bit 1 → +1.
pub fn pam2_modulate(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { -1.0 } else { 1.0 }).collect()
}

/// Convolves `x` with `taps` and keeps `x.len()` outputs aligned so that
/// `taps[delay]` multiplies the current sample.
fn convolve_aligned(x: &[f64], taps: &[f64], delay: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .filter_map(|(j, &t)| {
                    let src = i + delay as isize - j as isize;
                    (0..n).contains(&src).then(|| t * x[src as usize])
                })
                .sum()
        })
        .collect()
}

/// Zero-stuffs `symbols` at `sps` and filters with `pulse`.
pub fn upsample_shape(symbols: &[f64], bits: &[u8], sps: usize, pulse: &Pulse) -> Result<Waveform> {
    if symbols.len() != bits.len() {
        return Err(Error::Dimension {
            axis: "symbols vs origin bits",
            expected: bits.len(),
            actual: symbols.len(),
        });
    }
    if sps == 0 {
        return Err(Error::Config("sps must be positive".into()));
    }
    let n = symbols.len() * sps;
    let mut samples = vec![0.0; n];
    for (k, &s) in symbols.iter().enumerate() {
        let origin = (k * sps) as isize - pulse.delay as isize;
        for (j, &p) in pulse.taps.iter().enumerate() {
            let i = origin + j as isize;
            if (0..n as isize).contains(&i) {
                samples[i as usize] += s * p;
            }
        }
    }
    Ok(Waveform {
        samples,
        sps,
        symbol_count: symbols.len(),
        origin_bits: bits.to_vec(),
    })
}

/// FIR intersymbol interference on the sampled waveform, centered on the
/// middle tap.
pub fn apply_isi(waveform: &Waveform, taps: &[f64]) -> Result<Waveform> {
    if taps.len() % 2 == 0 {
        return Err(Error::Config(format!(
            "ISI taps must have odd length, got {}",
            taps.len()
        )));
    }
    let delay = (taps.len() - 1) / 2;
    Ok(waveform.with_samples(convolve_aligned(&waveform.samples, taps, delay)))
}

/// Memoryless cubic `y = a1·x + a3·x³`.
pub fn apply_nonlinearity(waveform: &Waveform, a1: f64, a3: f64) -> Result<Waveform> {
    if a1 <= 0.0 {
        return Err(Error::Config(format!("a1 must be positive, got {a1}")));
    }
    let samples = waveform.samples.iter().map(|&x| a1 * x + a3 * x * x * x).collect();
    Ok(waveform.with_samples(samples))
}

/// Affine received-power to SNR map.
pub fn power_to_snr(power_dbm: f64, calibration: &Calibration) -> f64 {
    calibration.slope_db_per_db * (power_dbm - calibration.offset_dbm)
}

/// Noise variance that puts `samples` at `snr_db`.
pub fn noise_variance(samples: &[f64], snr_db: f64) -> f64 {
    let power = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    power / 10f64.powf(snr_db / 10.0)
}

/// Adds white Gaussian noise at `snr_db` relative to the measured signal
/// power. An infinite SNR leaves the waveform untouched.
pub fn apply_awgn(waveform: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if snr_db.is_nan() {
        return Err(Error::NumericDomain("snr_db"));
    }
    if snr_db == f64::INFINITY {
        return Ok(waveform.clone());
    }
    let sigma = noise_variance(&waveform.samples, snr_db).sqrt();
    let mut rng = rng::stream(seed, NOISE_STREAM);
    let samples = waveform
        .samples
        .iter()
        .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(waveform.with_samples(samples))
}

/// Full chain at `power_dbm`; `power_dbm = +∞` disables noise.
pub fn simulate_link(config: &ChannelConfig, n_symbols: usize, power_dbm: f64, seed: u64) -> Result<Waveform> {
    config.validate()?;
    let snr = if power_dbm == f64::INFINITY {
        f64::INFINITY
    } else {
        power_to_snr(power_dbm, &config.calibration)
    };
    simulate_at_snr(config, n_symbols, snr, seed)
}

/// [`simulate_link`] with the SNR given directly.
pub fn simulate_at_snr(config: &ChannelConfig, n_symbols: usize, snr_db: f64, seed: u64) -> Result<Waveform> {
    let bits = random_bits(n_symbols, seed)?;
    let pulse = Pulse::raised_cosine(ROLL_OFF, config.sps, PULSE_SPAN_SYMBOLS);
    let shaped = upsample_shape(&pam2_modulate(&bits), &bits, config.sps, &pulse)?;
    let bent = apply_nonlinearity(&shaped, config.a1, config.a3)?;
    let smeared = apply_isi(&bent, &config.isi_taps)?;
    apply_awgn(&smeared, snr_db, seed)
}

/// Noise-free eye opening at the symbol instants: half the gap between
/// the lowest `+1` sample and the highest `−1` sample. Negative when the
/// eye is closed.
pub fn eye_opening(waveform: &Waveform) -> f64 {
    let (mut low_one, mut high_zero) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, &b) in waveform.symbol_samples().zip(&waveform.origin_bits) {
        if b == 1 {
            low_one = low_one.min(x);
        } else {
            high_zero = high_zero.max(x);
        }
    }
    (low_one - high_zero) / 2.0
}

/// Sign decisions at the symbol instants versus the origin bits.
pub fn threshold_errors(waveform: &Waveform) -> usize {
    waveform
        .symbol_samples()
        .zip(&waveform.origin_bits)
        .filter(|&(x, &b)| u8::from(x >= 0.0) != b)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(symbols: &[f64]) -> Waveform {
        let bits: Vec<u8> = symbols.iter().map(|&s| u8::from(s > 0.0)).collect();
        upsample_shape(symbols, &bits, 4, &Pulse::rectangular(4)).unwrap()
    }

    #[test]
    fn bits_are_deterministic_and_balanced() {
        assert_eq!(random_bits(100, 9).unwrap(), random_bits(100, 9).unwrap());
        assert_ne!(random_bits(100, 9).unwrap(), random_bits(100, 10).unwrap());
        let ones = random_bits(1_000_000, 1).unwrap().iter().filter(|&&b| b == 1).count();
        assert!((ones as f64 / 1e6 - 0.5).abs() < 0.002);
        assert!(random_bits(0, 1).is_err());
    }

    #[test]
    fn modulation_mapping() {
        assert_eq!(pam2_modulate(&[0, 1, 1, 0]), vec![-1.0, 1.0, 1.0, -1.0]);
        assert!(pam2_modulate(&[0; 5]).iter().all(|&s| s == -1.0));
    }

    #[test]
    fn rectangular_shaping_repeats_symbols() {
        let w = clean(&[1.0, -1.0, 1.0]);
        assert_eq!(w.samples, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn impulse_reproduces_pulse() {
        let pulse = Pulse::raised_cosine(ROLL_OFF, 4, PULSE_SPAN_SYMBOLS);
        assert_eq!(pulse.taps.len(), 33);
        assert!((pulse.taps[pulse.delay] - 1.0).abs() < 1e-15);
        let mut symbols = vec![0.0; 21];
        symbols[10] = 1.0;
        let w = upsample_shape(&symbols, &[0; 21], 4, &pulse).unwrap();
        let start = 40 - pulse.delay;
        assert_eq!(&w.samples[start..start + pulse.taps.len()], &pulse.taps[..]);
    }

    #[test]
    fn raised_cosine_has_zero_crossings_at_other_symbols() {
        let pulse = Pulse::raised_cosine(ROLL_OFF, 4, PULSE_SPAN_SYMBOLS);
        for k in 1..=4 {
            assert!(pulse.taps[pulse.delay + 4 * k].abs() < 1e-12);
        }
    }

    #[test]
    fn isi_identity_and_closed_form() {
        let w = clean(&[1.0, -1.0, 1.0, -1.0, 1.0]);
        assert_eq!(apply_isi(&w, &[1.0]).unwrap(), w);
        let smeared = apply_isi(&w, &[0.25, 0.5, 0.25]).unwrap();
        // Inside a symbol the samples are untouched; at each inner symbol
        // edge one neighbour has the opposite sign, leaving half amplitude.
        for k in 1..4 {
            let s = w.samples[4 * k];
            assert_eq!(smeared.samples[4 * k], 0.5 * s);
            assert_eq!(smeared.samples[4 * k + 1], s);
            assert_eq!(smeared.samples[4 * k + 2], s);
            assert_eq!(smeared.samples[4 * k + 3], 0.5 * s);
        }
        assert!(apply_isi(&w, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn nonlinearity_values() {
        let w = clean(&[1.0, -1.0]);
        let y = apply_nonlinearity(&w, 1.0, -0.1).unwrap();
        assert!((y.samples[0] - 0.9).abs() < 1e-15);
        assert!((y.samples[4] + 0.9).abs() < 1e-15);
        assert_eq!(apply_nonlinearity(&w, 2.0, 0.0).unwrap().samples[0], 2.0);
        assert!(apply_nonlinearity(&w, 0.0, 0.0).is_err());
    }

    #[test]
    fn snr_is_affine_in_power() {
        let cal = Calibration {
            slope_db_per_db: 0.6,
            offset_dbm: -30.0,
        };
        let d = power_to_snr(-17.0, &cal) - power_to_snr(-18.0, &cal);
        assert!((d - 0.6).abs() < 1e-12);
    }

    #[test]
    fn infinite_snr_is_noiseless() {
        let w = clean(&[1.0, -1.0, 1.0]);
        assert_eq!(apply_awgn(&w, f64::INFINITY, 3).unwrap(), w);
    }

    #[test]
    fn noise_variance_matches_command() {
        let n = 100_000;
        let w = Waveform {
            samples: vec![1.0; n],
            sps: 4,
            symbol_count: n / 4,
            origin_bits: vec![1; n / 4],
        };
        let noisy = apply_awgn(&w, 10.0, 5).unwrap();
        let var = noisy.samples.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / n as f64;
        assert!((var / 0.1 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn clean_chain_is_transparent() {
        let mut cfg = ChannelConfig::preset(DistancePreset::D10km);
        cfg.isi_taps = vec![1.0];
        cfg.a3 = 0.0;
        let w = simulate_link(&cfg, 2000, f64::INFINITY, 4).unwrap();
        assert_eq!(threshold_errors(&w), 0);
        assert_eq!(w.samples.len(), 8000);
        assert_eq!(simulate_link(&cfg, 2000, -17.0, 4).unwrap(), simulate_link(&cfg, 2000, -17.0, 4).unwrap());
    }

    #[test]
    fn eye_closes_with_distance() {
        let eye = |d| {
            let cfg = ChannelConfig::preset(d);
            eye_opening(&simulate_link(&cfg, 10_000, f64::INFINITY, 1).unwrap())
        };
        let (e10, e15, e20) = (eye(DistancePreset::D10km), eye(DistancePreset::D15km), eye(DistancePreset::D20km));
        assert!(e10 > e15 && e15 > e20, "{e10} {e15} {e20}");
    }
}
