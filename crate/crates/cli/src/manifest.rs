//! `manifest.toml`: the resolved run plus a SHA-256 of every file it wrote.
//!
//! ```toml
//! tool = "rofdecide 0.1.0"
//!
//! [run]
//! command = "sweep-power"
//! models = ["cnn", "threshold"]
//! ...
//!
//! [[artifacts]]
//! path = "ber_curve.csv"
//! sha256 = "9f2c…"
//! ```
//!
//! `rofdecide replay` re-executes `[run]` and compares the hashes.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rofdecide::harness::{ModelKind, SweepConfig, TrainConfig};
use rofdecide::link::ChannelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub run: Run,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run, with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Run {
    Gen(GenRun),
    Train(TrainRun),
    SweepPower(PowerRun),
    SweepIterations(IterationsRun),
    SweepDatasize(DatasizeRun),
}

impl Run {
    pub fn name(&self) -> &'static str {
        match self {
            Run::Gen(_) => "gen",
            Run::Train(_) => "train",
            Run::SweepPower(_) => "sweep power",
            Run::SweepIterations(_) => "sweep iterations",
            Run::SweepDatasize(_) => "sweep datasize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRun {
    pub symbols: usize,
    pub seed: u64,
    pub channel: ChannelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelKind,
    pub seed: u64,
    pub datasets: Vec<InputFile>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRun {
    pub models: Vec<ModelKind>,
    pub sweep: SweepConfig,
    pub channels: Vec<ChannelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationsRun {
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub windows_per_power: usize,
    pub train: TrainConfig,
    pub channel: ChannelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasizeRun {
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub power_dbm: f64,
    pub sizes: Vec<usize>,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub train: TrainConfig,
    pub channel: ChannelConfig,
}

impl Manifest {
    pub fn new(run: Run) -> Self {
        Self {
            tool: format!("rofdecide {}", env!("CARGO_PKG_VERSION")),
            run,
            artifacts: Vec::new(),
        }
    }

    /// Hashes `dir/name` and records it.
    pub fn add_artifact(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_file(&dir.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(FILE_NAME);
        let text = toml::to_string(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
