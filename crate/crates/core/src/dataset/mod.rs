//! Labeled 16-sample windows cut from received waveforms.

mod io;

pub use io::{read_dataset, write_dataset, MAGIC, VERSION};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::link::{self, ChannelConfig, DistancePreset, Waveform};
use crate::rng;
use crate::tensor::Tensor;

pub const SYMBOLS_PER_WINDOW: usize = 4;
pub const WINDOW: usize = SYMBOLS_PER_WINDOW * link::SAMPLES_PER_SYMBOL;
pub const DECIDE_INDEX: usize = 2;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// Row-major `[N, 16]` window samples (the channel axis has size 1).
    pub inputs: Vec<f64>,
    pub labels: Vec<u8>,
    pub decide_index: usize,
    /// Offset already subtracted from every sample.
    pub center: f64,
    /// Received power each window was generated at, when known.
    pub powers: Vec<Option<f64>>,
    pub distance: Option<DistancePreset>,
    pub seed: u64,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.inputs[i * WINDOW..][..WINDOW]
    }

    /// Offset of the decided symbol's sample inside a window.
    pub fn decide_offset(&self) -> usize {
        self.decide_index * link::SAMPLES_PER_SYMBOL
    }

    /// The whole input set as a `[N, 1, 16]` tensor.
    pub fn inputs_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), 1, WINDOW], self.inputs.clone())
    }

    /// Windows `indices` as a `[B, 1, 16]` tensor plus their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut values = Vec::with_capacity(indices.len() * WINDOW);
        for &i in indices {
            values.extend_from_slice(self.window(i));
        }
        let labels = indices.iter().map(|&i| usize::from(self.labels[i])).collect();
        Ok((Tensor::new(vec![indices.len(), 1, WINDOW], values)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * WINDOW);
        for &i in indices {
            inputs.extend_from_slice(self.window(i));
        }
        Self {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            powers: indices.iter().map(|&i| self.powers[i]).collect(),
            ..self.clone_meta()
        }
    }

    /// The first `n` windows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs[..n * WINDOW].to_vec(),
            labels: self.labels[..n].to_vec(),
            powers: self.powers[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            inputs: Vec::new(),
            labels: Vec::new(),
            decide_index: self.decide_index,
            center: self.center,
            powers: Vec::new(),
            distance: self.distance,
            seed: self.seed,
        }
    }

    /// Re-centers so that `center` in total has been subtracted.
    pub fn apply_center(&mut self, center: f64) {
        let delta = center - self.center;
        self.inputs.iter_mut().for_each(|x| *x -= delta);
        self.center = center;
    }

    /// Mean of all window samples.
    pub fn sample_mean(&self) -> f64 {
        self.inputs.iter().sum::<f64>() / self.inputs.len() as f64
    }

    /// Rows belonging to power `power_dbm`.
    pub fn at_power(&self, power_dbm: f64) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.powers[i] == Some(power_dbm)).collect();
        self.subset(&idx)
    }
}

/// Sliding 16-sample windows with a one-symbol stride; window `k` covers
/// symbols `k..k+4` and is labeled by symbol `k + decide_index`.
pub fn window(waveform: &Waveform, decide_index: usize) -> Result<WindowedDataset> {
    if waveform.sps != link::SAMPLES_PER_SYMBOL {
        return Err(Error::Config(format!("windows need sps = 4, got {}", waveform.sps)));
    }
    if decide_index >= SYMBOLS_PER_WINDOW {
        return Err(Error::Config(format!("decide_index must be in 0..4, got {decide_index}")));
    }
    if waveform.symbol_count < SYMBOLS_PER_WINDOW {
        return Err(Error::Size(format!(
            "need at least {SYMBOLS_PER_WINDOW} symbols to window, got {}",
            waveform.symbol_count
        )));
    }
    let n = waveform.symbol_count - (SYMBOLS_PER_WINDOW - 1);
    let sps = waveform.sps;
    let mut inputs = Vec::with_capacity(n * WINDOW);
    for k in 0..n {
        inputs.extend_from_slice(&waveform.samples[k * sps..][..WINDOW]);
    }
    Ok(WindowedDataset {
        inputs,
        labels: waveform.origin_bits[decide_index..][..n].to_vec(),
        decide_index,
        center: 0.0,
        powers: vec![None; n],
        distance: None,
        seed: 0,
    })
}

/// Seeded shuffle then split. Both halves are centered by the training
/// half's sample mean.
pub fn split(dataset: &WindowedDataset, train_fraction: f64, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let n = dataset.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Size(format!("cannot split {n} windows at {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 2));
    let mut train = dataset.subset(&order[..n_train]);
    let mut test = dataset.subset(&order[n_train..]);
    let center = dataset.center + train.sample_mean();
    train.apply_center(center);
    test.apply_center(center);
    Ok((train, test))
}

/// Windows from `n_symbols` simulated at `power_dbm`, tagged with the power.
pub fn generate(config: &ChannelConfig, n_symbols: usize, power_dbm: f64, seed: u64) -> Result<WindowedDataset> {
    let waveform = link::simulate_link(config, n_symbols, power_dbm, seed)?;
    let mut ds = window(&waveform, DECIDE_INDEX)?;
    ds.powers = vec![Some(power_dbm); ds.len()];
    ds.distance = Some(config.distance);
    ds.seed = seed;
    Ok(ds)
}

/// `n_per_power` windows at every grid power, concatenated and shuffled.
/// Each power draws its own bit sequence.
pub fn pool_across_powers(config: &ChannelConfig, n_per_power: usize, seed: u64) -> Result<WindowedDataset> {
    if n_per_power == 0 {
        return Err(Error::Size("n_per_power must be ≥ 1".into()));
    }
    let parts = config
        .power_grid_dbm
        .iter()
        .enumerate()
        .map(|(i, &p)| generate(config, n_per_power + SYMBOLS_PER_WINDOW - 1, p, rng::derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = concat(&parts)?;
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.shuffle(&mut rng::stream(seed, 3));
    pooled = pooled.subset(&order);
    pooled.seed = seed;
    Ok(pooled)
}

pub fn concat(parts: &[WindowedDataset]) -> Result<WindowedDataset> {
    let first = parts.first().ok_or_else(|| Error::Size("nothing to concatenate".into()))?;
    let mut out = first.clone_meta();
    for p in parts {
        if p.decide_index != first.decide_index || p.center != first.center {
            return Err(Error::Config("cannot concatenate datasets with different layouts".into()));
        }
        out.inputs.extend_from_slice(&p.inputs);
        out.labels.extend_from_slice(&p.labels);
        out.powers.extend_from_slice(&p.powers);
        if p.distance != first.distance {
            out.distance = None;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::Pulse;

    fn rectangular(bits: &[u8]) -> Waveform {
        link::upsample_shape(&link::pam2_modulate(bits), bits, 4, &Pulse::rectangular(4)).unwrap()
    }

    #[test]
    fn window_count_and_labels() {
        let bits = [1, 0, 0, 1, 1, 0, 1, 0];
        let ds = window(&rectangular(&bits), 2).unwrap();
        assert_eq!(ds.len(), 5);
        for k in 0..5 {
            assert_eq!(ds.labels[k], bits[k + 2]);
            let x = ds.window(k)[ds.decide_offset()];
            assert_eq!(x, if bits[k + 2] == 1 { 1.0 } else { -1.0 });
            if k > 0 {
                assert_eq!(&ds.window(k - 1)[4..], &ds.window(k)[..12]);
            }
        }
        assert!(window(&rectangular(&[1, 0, 1]), 2).is_err());
    }

    #[test]
    fn split_is_disjoint_and_centered() {
        let bits = link::random_bits(1003, 5).unwrap();
        let mut w = rectangular(&bits);
        w.samples.iter_mut().for_each(|x| *x += 0.3);
        let ds = window(&w, 2).unwrap();
        let (train, test) = split(&ds, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
        assert!(train.sample_mean().abs() < 1e-10);
        assert_eq!(train.center, test.center);
        let (again, _) = split(&ds, 0.8, 1).unwrap();
        assert_eq!(again, train);
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn pooled_counts_are_equal_per_power() {
        let cfg = ChannelConfig::preset(DistancePreset::D10km);
        let pool = pool_across_powers(&cfg, 500, 3).unwrap();
        assert_eq!(pool.len(), 8 * 500);
        for &p in &cfg.power_grid_dbm {
            assert_eq!(pool.at_power(p).len(), 500);
        }
    }
}
