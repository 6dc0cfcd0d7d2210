use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_model, Model, ModelKind, ModelSpec};
use super::stats::{wilson_interval, Z95};
use super::train::{evaluate_ber, hard_decision_baseline, train, BerCount, TrainConfig, TrainTrace};
use crate::dataset::{self, WindowedDataset, SYMBOLS_PER_WINDOW, TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::link::{ChannelConfig, DistancePreset, FEC_LIMIT};
use crate::rng;

/// Fewest bits per BER point: ten expected errors at the FEC limit.
pub const MIN_BITS_PER_POINT: u64 = (10.0 / FEC_LIMIT) as u64 + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub train: TrainConfig,
    /// Pooled training windows generated at each grid power.
    pub train_windows_per_power: usize,
    /// Evaluated windows at each grid power.
    pub test_windows: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_windows_per_power: 12_500,
            test_windows: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub power_dbm: f64,
    pub errors: u64,
    pub bits: u64,
    pub ber: f64,
}

impl BerPoint {
    fn new(power_dbm: f64, c: BerCount) -> Self {
        Self {
            power_dbm,
            errors: c.errors,
            bits: c.count,
            ber: c.ber(),
        }
    }

    pub fn wilson(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.bits, Z95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub model: ModelKind,
    pub distance: DistancePreset,
    pub rows: Vec<BerPoint>,
}

impl BerCurve {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.ber).fold(0.0, f64::max)
    }

    pub fn best(&self) -> f64 {
        self.rows.iter().map(|r| r.ber).fold(1.0, f64::min)
    }

    pub fn at(&self, power_dbm: f64) -> Option<&BerPoint> {
        self.rows.iter().find(|r| r.power_dbm == power_dbm)
    }

    /// BER never rises with power by more than the Wilson intervals allow.
    pub fn monotone_within_ci(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].wilson().0 <= w[0].wilson().1)
    }
}

/// Datasets shared by every model of one power sweep.
#[derive(Debug, Clone)]
pub struct PowerSweepData {
    pub channel: ChannelConfig,
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub tests: Vec<(f64, WindowedDataset)>,
}

impl PowerSweepData {
    /// Pooled training data (split into train and validation) plus one
    /// independent test set per grid power, all centered by the training
    /// mean.
    pub fn generate(channel: &ChannelConfig, cfg: &SweepConfig) -> Result<Self> {
        let pool = dataset::pool_across_powers(channel, cfg.train_windows_per_power, rng::derive_seed(cfg.seed, 100))?;
        let (train, validation) = dataset::split(&pool, TRAIN_FRACTION, rng::derive_seed(cfg.seed, 101))?;
        let tests = channel
            .power_grid_dbm
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let seed = rng::derive_seed(cfg.seed, 200 + i as u64);
                let mut ds = dataset::generate(channel, cfg.test_windows + SYMBOLS_PER_WINDOW - 1, p, seed)?;
                ds.apply_center(train.center);
                Ok((p, ds))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            channel: channel.clone(),
            train,
            validation,
            tests,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PowerSweep {
    pub curve: BerCurve,
    pub trace: TrainTrace,
    pub model: Model,
    /// Number of `train` calls made (one for networks, zero for threshold).
    pub trainings: usize,
    /// Parameter hash before and after each per-power evaluation.
    pub eval_hashes: Vec<(u64, u64)>,
}

/// Trains once on the pooled data, then evaluates every grid power with
/// the same frozen model.
pub fn sweep_power_on(spec: &ModelSpec, data: &PowerSweepData, cfg: &SweepConfig) -> Result<PowerSweep> {
    let mut model = build_model(spec)?;
    let trainings = usize::from(model.is_trainable());
    let trace = train(&mut model, &data.train, &data.validation, &cfg.train)?;
    let mut rows = Vec::with_capacity(data.tests.len());
    let mut eval_hashes = Vec::with_capacity(data.tests.len());
    for (p, test) in &data.tests {
        let before = model.param_hash();
        let count = if model.is_trainable() {
            evaluate_ber(&model, test)?
        } else {
            hard_decision_baseline(test)?
        };
        let after = model.param_hash();
        if before != after {
            return Err(Error::Spec("evaluation changed model parameters".into()));
        }
        if count.count < MIN_BITS_PER_POINT {
            return Err(Error::Size(format!(
                "{} bits per point cannot resolve the FEC limit (need {MIN_BITS_PER_POINT})",
                count.count
            )));
        }
        eval_hashes.push((before, after));
        rows.push(BerPoint::new(*p, count));
    }
    Ok(PowerSweep {
        curve: BerCurve {
            model: spec.kind,
            distance: data.channel.distance,
            rows,
        },
        trace,
        model,
        trainings,
        eval_hashes,
    })
}

pub fn sweep_power(spec: &ModelSpec, channel: &ChannelConfig, cfg: &SweepConfig) -> Result<PowerSweep> {
    sweep_power_on(spec, &PowerSweepData::generate(channel, cfg)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasizeRow {
    pub size: usize,
    pub errors: u64,
    pub bits: u64,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasizeSweep {
    pub model: ModelKind,
    pub rows: Vec<DatasizeRow>,
    pub plateau_size: Option<usize>,
}

/// Smallest size whose BER is within `tolerance` (relative) of the BER at
/// the largest size.
pub fn plateau_size(rows: &[DatasizeRow], tolerance: f64) -> Option<usize> {
    let reference = rows.last()?.ber;
    rows.iter().find(|r| r.ber <= reference * (1.0 + tolerance)).map(|r| r.size)
}

/// Doubling sizes `start, 2·start, …` up to and including `end`.
pub fn doubling_sizes(start: usize, end: usize) -> Vec<usize> {
    std::iter::successors(Some(start), |&s| Some(s * 2)).take_while(|&s| s <= end).collect()
}

/// Trains a fresh model on the first `size` windows of `pool` for every
/// size, with identical seeds, and evaluates each on the same test set.
pub fn sweep_training_size(
    spec: &ModelSpec,
    pool: &WindowedDataset,
    sizes: &[usize],
    validation: &WindowedDataset,
    test: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<DatasizeSweep> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sizes must be non-empty and ascending".into()));
    }
    if sizes[sizes.len() - 1] > pool.len() {
        return Err(Error::Size(format!("pool holds {} windows, largest size is {}", pool.len(), sizes[sizes.len() - 1])));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut model = build_model(spec)?;
        train(&mut model, &pool.head(size), validation, cfg)?;
        let c = if model.is_trainable() {
            evaluate_ber(&model, test)?
        } else {
            hard_decision_baseline(test)?
        };
        rows.push(DatasizeRow {
            size,
            errors: c.errors,
            bits: c.count,
            ber: c.ber(),
        });
    }
    Ok(DatasizeSweep {
        model: spec.kind,
        plateau_size: plateau_size(&rows, 0.1),
        rows,
    })
}

/// One training per spec on identical data; traces are comparable.
pub fn sweep_iterations(
    specs: &[ModelSpec],
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<Vec<TrainTrace>> {
    specs
        .iter()
        .map(|spec| {
            let mut model = build_model(spec)?;
            train(&mut model, train_set, test_set, cfg)
        })
        .collect()
}

// ── CSV emission ───────────────────────────────────────────────────

#[derive(Serialize)]
struct CurveRow<'a> {
    model: &'a str,
    distance: &'a str,
    power_dbm: f64,
    errors: u64,
    bits: u64,
    ber: f64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    model: &'a str,
    iteration: usize,
    loss: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct SizeRow<'a> {
    model: &'a str,
    size: usize,
    ber: f64,
}

pub const BER_CURVE_HEADER: [&str; 6] = ["model", "distance", "power_dbm", "errors", "bits", "ber"];
pub const TRACE_HEADER: [&str; 4] = ["model", "iteration", "loss", "accuracy"];
pub const DATASIZE_HEADER: [&str; 3] = ["model", "size", "ber"];

/// The header is written explicitly so an empty table still has one.
fn write_rows<W: Write, R: Serialize>(out: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `model,distance,power_dbm,errors,bits,ber`, sorted by model, distance
/// and power.
pub fn write_ber_curves(out: impl Write, curves: &[BerCurve]) -> Result<()> {
    let mut rows: Vec<_> = curves
        .iter()
        .flat_map(|c| {
            c.rows.iter().map(move |r| CurveRow {
                model: c.model.name(),
                distance: c.distance.name(),
                power_dbm: r.power_dbm,
                errors: r.errors,
                bits: r.bits,
                ber: r.ber,
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.model, a.distance).cmp(&(b.model, b.distance)).then(a.power_dbm.total_cmp(&b.power_dbm)));
    write_rows(out, &BER_CURVE_HEADER, rows)
}

/// `model,iteration,loss,accuracy`, in trace order.
pub fn write_traces(out: impl Write, traces: &[TrainTrace]) -> Result<()> {
    let mut sorted: Vec<&TrainTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| a.model.cmp(&b.model));
    write_rows(
        out,
        &TRACE_HEADER,
        sorted.into_iter().flat_map(|t| {
            t.records.iter().map(move |r| TraceRow {
                model: &t.model,
                iteration: r.iteration,
                loss: r.loss,
                accuracy: r.accuracy,
            })
        }),
    )
}

/// `model,size,ber`.
pub fn write_datasize(out: impl Write, sweeps: &[DatasizeSweep]) -> Result<()> {
    let mut sorted: Vec<&DatasizeSweep> = sweeps.iter().collect();
    sorted.sort_by_key(|s| s.model);
    write_rows(
        out,
        &DATASIZE_HEADER,
        sorted.into_iter().flat_map(|s| {
            s.rows.iter().map(move |r| SizeRow {
                model: s.model.name(),
                size: r.size,
                ber: r.ber,
            })
        }),
    )
}

pub fn write_csv_file<F>(path: impl AsRef<Path>, emit: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit(&mut f)?;
    f.flush()?;
    Ok(())
}
