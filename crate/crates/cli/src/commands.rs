use std::fs;
use std::path::{Path, PathBuf};

use rofdecide::dataset::{self, read_dataset, write_dataset, SYMBOLS_PER_WINDOW, TRAIN_FRACTION};
use rofdecide::harness::{
    build_model, doubling_sizes, evaluate_ber, hard_decision_baseline, sweep_iterations, sweep_power_on,
    sweep_training_size, train, write_ber_curves, write_csv_file, write_datasize, write_traces, Model, ModelKind,
    ModelSpec, PowerSweepData, SweepConfig,
};
use rofdecide::link::{DistancePreset, FEC_LIMIT};
use rofdecide::rng;
use rofdecide::verify::{self, VerifyOptions};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, SweepCommand};
use crate::manifest::{
    sha256_file, DatasizeRun, GenRun, InputFile, IterationsRun, Manifest, PowerRun, Run, TrainRun,
};
use crate::CliError;

pub const BER_CURVE_CSV: &str = "ber_curve.csv";
pub const TRAIN_TRACE_CSV: &str = "train_trace.csv";
pub const DATASIZE_CSV: &str = "datasize.csv";
pub const MODEL_JSON: &str = "model.json";

/// A trained model together with the offset its inputs were centered by.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub center: f64,
    pub model: Model,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let (run, out) = match cli.command {
        Command::Verify(a) => {
            return run_verify(&VerifyOptions {
                inject_fault: a.inject_fault,
                seed: a.seed,
                ..VerifyOptions::default()
            })
        }
        Command::Replay(a) => return replay(&a.manifest, a.out),
        Command::Gen(a) => {
            let channel = a.channel.resolve_one(DistancePreset::D10km)?;
            let run = Run::Gen(GenRun {
                symbols: a.symbols,
                seed: a.seed,
                channel,
            });
            (run, a.out.out)
        }
        Command::Train(a) => {
            let datasets = a
                .datasets
                .iter()
                .map(|p| {
                    let path = fs::canonicalize(p)
                        .map_err(|e| CliError::Usage(format!("dataset {}: {e}", p.display())))?;
                    let sha256 = sha256_file(&path)?;
                    Ok(InputFile { path, sha256 })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let run = Run::Train(TrainRun {
                model: a.model,
                seed: a.seed,
                datasets,
                train: a.train.config(a.seed),
            });
            (run, a.out.out)
        }
        Command::Sweep(SweepCommand::Power(a)) => {
            let run = Run::SweepPower(PowerRun {
                models: a.models,
                sweep: SweepConfig {
                    train: a.train.config(a.seed),
                    train_windows_per_power: a.train_windows,
                    test_windows: a.test_windows,
                    seed: a.seed,
                },
                channels: a.channel.resolve(&DistancePreset::ALL)?,
            });
            (run, a.out.out)
        }
        Command::Sweep(SweepCommand::Iterations(a)) => {
            let run = Run::SweepIterations(IterationsRun {
                models: a.models,
                seed: a.seed,
                windows_per_power: a.windows_per_power,
                train: a.train.config(a.seed),
                channel: a.channel.resolve_one(DistancePreset::D10km)?,
            });
            (run, a.out.out)
        }
        Command::Sweep(SweepCommand::Datasize(a)) => {
            if a.start == 0 || a.end < a.start {
                return Err(CliError::Usage("--start must be positive and not above --end".into()));
            }
            let run = Run::SweepDatasize(DatasizeRun {
                models: a.models,
                seed: a.seed,
                power_dbm: a.power,
                sizes: doubling_sizes(a.start, a.end),
                validation_windows: a.validation_windows,
                test_windows: a.test_windows,
                train: a.train.config(a.seed),
                channel: a.channel.resolve_one(DistancePreset::D20km)?,
            });
            (run, a.out.out)
        }
    };
    let manifest = perform(run, &out)?;
    let path = manifest.write(&out)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Executes a resolved run into `out` and returns its manifest.
pub fn perform(run: Run, out: &Path) -> Result<Manifest, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut manifest = Manifest::new(run);
    let artifacts = match &manifest.run {
        Run::Gen(r) => gen(r, out)?,
        Run::Train(r) => train_one(r, out)?,
        Run::SweepPower(r) => sweep_power(r, out)?,
        Run::SweepIterations(r) => sweep_iters(r, out)?,
        Run::SweepDatasize(r) => sweep_sizes(r, out)?,
    };
    for name in artifacts {
        manifest.add_artifact(out, &name)?;
    }
    Ok(manifest)
}

fn specs(models: &[ModelKind], seed: u64) -> Vec<ModelSpec> {
    models.iter().map(|&k| ModelSpec::preset(k, seed)).collect()
}

fn gen(r: &GenRun, out: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for (i, &p) in r.channel.power_grid_dbm.iter().enumerate() {
        let ds = dataset::generate(&r.channel, r.symbols, p, rng::derive_seed(r.seed, i as u64))?;
        let name = format!("{}_{p:+.2}dBm.rfwd", r.channel.distance);
        write_dataset(&ds, out.join(&name))?;
        println!("{name}: {} windows", ds.len());
        names.push(name);
    }
    Ok(names)
}

fn train_one(r: &TrainRun, out: &Path) -> Result<Vec<String>, CliError> {
    let mut parts = Vec::with_capacity(r.datasets.len());
    for f in &r.datasets {
        if !f.path.exists() {
            return Err(CliError::Usage(format!("dataset {} does not exist", f.path.display())));
        }
        if sha256_file(&f.path)? != f.sha256 {
            return Err(CliError::Failed(format!("dataset {} changed since the manifest was written", f.path.display())));
        }
        parts.push(read_dataset(&f.path)?);
    }
    let pooled = dataset::concat(&parts)?;
    let (train_set, test_set) = dataset::split(&pooled, TRAIN_FRACTION, rng::derive_seed(r.seed, 101))?;
    let mut model = build_model(&ModelSpec::preset(r.model, r.seed))?;
    let trace = train(&mut model, &train_set, &test_set, &r.train)?;
    let ber = if model.is_trainable() {
        println!(
            "{}: {} parameters, {} iterations, iterations to target: {}",
            r.model,
            model.parameter_count(),
            trace.iterations_run,
            trace.iterations_to_target.map_or("not reached".into(), |i| i.to_string())
        );
        evaluate_ber(&model, &test_set)?
    } else {
        println!("threshold: no parameters, nothing to train");
        hard_decision_baseline(&test_set)?
    };
    println!("held-out BER {:.3e} ({} errors / {} bits)", ber.ber(), ber.errors, ber.count);
    let file = ModelFile {
        center: train_set.center,
        model,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(out.join(MODEL_JSON), json).map_err(|e| CliError::io(&out.join(MODEL_JSON), e))?;
    write_csv_file(out.join(TRAIN_TRACE_CSV), |w| write_traces(w, &[trace]))?;
    Ok(vec![MODEL_JSON.into(), TRAIN_TRACE_CSV.into()])
}

fn sweep_power(r: &PowerRun, out: &Path) -> Result<Vec<String>, CliError> {
    let mut curves = Vec::new();
    for channel in &r.channels {
        let data = PowerSweepData::generate(channel, &r.sweep)?;
        for spec in specs(&r.models, r.sweep.seed) {
            let s = sweep_power_on(&spec, &data, &r.sweep)?;
            let worst = s.curve.worst();
            println!(
                "{:9} {}  trainings {}  worst BER {worst:.2e}  {}",
                spec.kind.name(),
                channel.distance,
                s.trainings,
                if worst < FEC_LIMIT { "within FEC limit" } else { "above FEC limit" }
            );
            curves.push(s.curve);
        }
    }
    write_csv_file(out.join(BER_CURVE_CSV), |w| write_ber_curves(w, &curves))?;
    Ok(vec![BER_CURVE_CSV.into()])
}

fn sweep_iters(r: &IterationsRun, out: &Path) -> Result<Vec<String>, CliError> {
    let pool = dataset::pool_across_powers(&r.channel, r.windows_per_power, rng::derive_seed(r.seed, 100))?;
    let (train_set, test_set) = dataset::split(&pool, TRAIN_FRACTION, rng::derive_seed(r.seed, 101))?;
    let traces = sweep_iterations(&specs(&r.models, r.seed), &train_set, &test_set, &r.train)?;
    for t in &traces {
        println!(
            "{:9} iterations to {:.3}: {}",
            t.model,
            r.train.target_accuracy,
            t.iterations_to_target.map_or("not reached".into(), |i| i.to_string())
        );
    }
    write_csv_file(out.join(TRAIN_TRACE_CSV), |w| write_traces(w, &traces))?;
    Ok(vec![TRAIN_TRACE_CSV.into()])
}

fn sweep_sizes(r: &DatasizeRun, out: &Path) -> Result<Vec<String>, CliError> {
    let largest = *r.sizes.last().ok_or_else(|| CliError::Usage("no training sizes".into()))?;
    let cell = |n: usize, tag: u64| dataset::generate(&r.channel, n + SYMBOLS_PER_WINDOW - 1, r.power_dbm, rng::derive_seed(r.seed, tag));
    let mut pool = cell(largest, 400)?;
    let center = pool.sample_mean();
    pool.apply_center(center);
    let mut validation = cell(r.validation_windows, 401)?;
    validation.apply_center(center);
    let mut test = cell(r.test_windows, 402)?;
    test.apply_center(center);
    let mut sweeps = Vec::new();
    for spec in specs(&r.models, r.seed) {
        let s = sweep_training_size(&spec, &pool, &r.sizes, &validation, &test, &r.train)?;
        println!(
            "{:9} plateau size: {}",
            s.model.name(),
            s.plateau_size.map_or("none".into(), |n| n.to_string())
        );
        sweeps.push(s);
    }
    write_csv_file(out.join(DATASIZE_CSV), |w| write_datasize(w, &sweeps))?;
    Ok(vec![DATASIZE_CSV.into()])
}

fn run_verify(opts: &VerifyOptions) -> Result<(), CliError> {
    let checks = verify::run_all(opts)?;
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        for l in &c.layers {
            println!(
                "       {:16} max rel error {:.2e}  checked {:5}  skipped {}",
                l.name, l.max_rel_error, l.checked, l.skipped
            );
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let recorded = crate::manifest::Manifest::load(manifest_path)?;
    let out = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    println!("replaying {} into {}", recorded.run.name(), out.display());
    let fresh = perform(recorded.run.clone(), &out)?;
    fresh.write(&out)?;
    let mut mismatches = 0;
    for a in &recorded.artifacts {
        let now = fresh.artifacts.iter().find(|b| b.path == a.path).map(|b| b.sha256.as_str());
        let same = now == Some(a.sha256.as_str());
        println!("{} {}", if same { "identical" } else { "DIFFERS  " }, a.path);
        mismatches += usize::from(!same);
    }
    if mismatches > 0 {
        return Err(CliError::Failed(format!("{mismatches} artifacts differ from the manifest")));
    }
    Ok(())
}
