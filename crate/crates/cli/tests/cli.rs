use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rofdecide_cli::manifest::{Manifest, Run};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rofdecide"));
    c.env_remove("ROFDECIDE_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rofdecide-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_TRAIN: &[&str] = &["--max-iterations", "10", "--batch-size", "128"];

fn gen_small(dir: &Path) {
    let o = run(&["gen", "--distance", "d10km", "--symbols", "3000", "--seed", "7", "--out", p(dir)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
}

#[test]
fn gen_writes_one_file_per_power_and_is_repeatable() {
    let a = scratch("gen-a");
    let b = scratch("gen-b");
    gen_small(&a);
    gen_small(&b);
    let files = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(files(&a).iter().filter(|f| f.to_string_lossy().ends_with(".rfwd")).count(), 8);
    let ma = Manifest::load(&a.join("manifest.toml")).unwrap();
    let mb = Manifest::load(&b.join("manifest.toml")).unwrap();
    assert_eq!(ma.artifacts, mb.artifacts);
    assert!(matches!(ma.run, Run::Gen(ref g) if g.symbols == 3000 && g.seed == 7));
}

#[test]
fn unknown_preset_is_a_usage_error() {
    assert_eq!(run(&["gen", "--distance", "d12km"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--model", "resnet", "--dataset", "x"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_defaults_and_outputs() {
    let data = scratch("train-data");
    gen_small(&data);
    let set = data.join("d10km_-17.00dBm.rfwd");
    let out = scratch("train-out");
    let o = run(&["train", "--model", "cnn", "--dataset", p(&set), "--max-iterations", "3", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let m = Manifest::load(&out.join("manifest.toml")).unwrap();
    let Run::Train(t) = m.run else { panic!("not a train manifest") };
    assert_eq!(t.train.batch_size, 1024);
    assert_eq!(t.train.lr, 0.0005);
    assert!(out.join("model.json").exists());
    let trace = fs::read_to_string(out.join("train_trace.csv")).unwrap();
    assert!(trace.starts_with("model,iteration,loss,accuracy\n"));
}

#[test]
fn threshold_trains_nothing() {
    let data = scratch("thr-data");
    gen_small(&data);
    let out = scratch("thr-out");
    let set = data.join("d10km_-16.00dBm.rfwd");
    let o = run(&["train", "--model", "threshold", "--dataset", p(&set), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nothing to train"));
    assert_eq!(fs::read_to_string(out.join("train_trace.csv")).unwrap(), "model,iteration,loss,accuracy\n");
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let out = scratch("missing");
    let o = run(&["train", "--model", "cnn", "--dataset", "/nonexistent/set.rfwd", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_three_with_iteration() {
    let data = scratch("div-data");
    gen_small(&data);
    let out = scratch("div-out");
    let set = data.join("d10km_-17.00dBm.rfwd");
    let o = run(&["train", "--model", "fcnn", "--dataset", p(&set), "--lr", "1e300", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged at iteration"));
}

#[test]
fn power_sweep_grid_and_replay() {
    let out = scratch("power");
    let mut args = vec![
        "sweep", "power", "--models", "cnn,bcnn,fcnn,threshold", "--distance", "d15km", "--train-windows", "200",
        "--test-windows", "3000", "--out", p(&out),
    ];
    args.extend_from_slice(SMALL_TRAIN);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let csv = fs::read_to_string(out.join("ber_curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,distance,power_dbm,errors,bits,ber");
    assert_eq!(lines.len(), 1 + 4 * 8);

    let again = scratch("power-replay");
    let o = run(&["replay", p(&out.join("manifest.toml")), "--out", p(&again)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(fs::read(out.join("ber_curve.csv")).unwrap(), fs::read(again.join("ber_curve.csv")).unwrap());

    // A tampered hash must be reported.
    let text = fs::read_to_string(out.join("manifest.toml")).unwrap();
    let m = Manifest::load(&out.join("manifest.toml")).unwrap();
    let tampered = text.replace(&m.artifacts[0].sha256, &"0".repeat(64));
    fs::write(out.join("manifest.toml"), tampered).unwrap();
    let o = run(&["replay", p(&out.join("manifest.toml")), "--out", p(&again)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn iterations_and_datasize_summaries() {
    let out = scratch("iters");
    let mut args = vec!["sweep", "iterations", "--models", "fcnn,cnn", "--windows-per-power", "300", "--out", p(&out)];
    args.extend_from_slice(SMALL_TRAIN);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("iterations to 0.985"));
    assert!(out.join("train_trace.csv").exists());

    let out = scratch("sizes");
    let mut args = vec![
        "sweep", "datasize", "--models", "fcnn", "--start", "500", "--end", "2000", "--validation-windows", "500",
        "--test-windows", "3000", "--out", p(&out),
    ];
    args.extend_from_slice(SMALL_TRAIN);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("plateau size"));
    let csv = fs::read_to_string(out.join("datasize.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.starts_with("model,size,ber\n"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let out = scratch("env");
    let o = bin()
        .args(["gen", "--symbols", "500"])
        .env("ROFDECIDE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("manifest.toml").exists());
}

#[test]
fn config_file_and_overrides() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/d20km.toml");
    let out = scratch("config");
    let o = run(&["gen", "--config", p(&configs), "--symbols", "500", "--calibration-offset", "-31", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let Run::Gen(g) = Manifest::load(&out.join("manifest.toml")).unwrap().run else { panic!() };
    assert_eq!(g.channel.distance.name(), "d20km");
    assert_eq!(g.channel.calibration.offset_dbm, -31.0);
    let bad = run(&["gen", "--config", "/nonexistent.toml"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let o = run(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("max rel error"));
    assert!(!text.contains("FAIL"));
    let o = run(&["verify", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL cnn gradients"));
}
