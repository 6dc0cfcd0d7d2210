use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rofdecide::harness::{ModelKind, TrainConfig};
use rofdecide::link::{ChannelConfig, DistancePreset};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "rofdecide", version, about = "Neural symbol decision for a simulated radio-over-fiber link")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the link and write one dataset file per grid power.
    Gen(GenArgs),
    /// Train one model on dataset files.
    Train(TrainArgs),
    /// Run one of the experiment sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Run the self-check suite.
    Verify(VerifyArgs),
    /// Re-execute a run from its manifest and compare artifact hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// BER versus received power, one pooled training per model and distance.
    Power(PowerArgs),
    /// Test accuracy versus training iteration on one pooled set.
    Iterations(IterationsArgs),
    /// BER versus training-set size at one power.
    Datasize(DatasizeArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "ROFDECIDE_OUT", default_value = "rofdecide-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChannelArgs {
    /// Distance presets, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub distance: Vec<DistancePreset>,
    /// Channel config files; replaces --distance.
    #[arg(long, conflicts_with = "distance")]
    pub config: Vec<PathBuf>,
    /// Overrides the calibration slope (dB of SNR per dB of power).
    #[arg(long)]
    pub calibration_slope: Option<f64>,
    /// Overrides the calibration offset (dBm).
    #[arg(long, allow_negative_numbers = true)]
    pub calibration_offset: Option<f64>,
}

impl ChannelArgs {
    /// Channels in flag order, or `default` when nothing was given.
    pub fn resolve(&self, default: &[DistancePreset]) -> Result<Vec<ChannelConfig>, CliError> {
        let mut out = if !self.config.is_empty() {
            self.config
                .iter()
                .map(|p| ChannelConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?
        } else if !self.distance.is_empty() {
            self.distance.iter().map(|&d| ChannelConfig::preset(d)).collect()
        } else {
            default.iter().map(|&d| ChannelConfig::preset(d)).collect()
        };
        for c in &mut out {
            if let Some(s) = self.calibration_slope {
                c.calibration.slope_db_per_db = s;
            }
            if let Some(o) = self.calibration_offset {
                c.calibration.offset_dbm = o;
            }
            c.validate()?;
        }
        Ok(out)
    }

    pub fn resolve_one(&self, default: DistancePreset) -> Result<ChannelConfig, CliError> {
        let mut all = self.resolve(&[default])?;
        if all.len() != 1 {
            return Err(CliError::Usage("this command takes exactly one channel".into()));
        }
        Ok(all.remove(0))
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    /// Test accuracy that counts as converged.
    #[arg(long, default_value_t = 0.985)]
    pub target: f64,
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    /// Evaluations without improvement tolerated after reaching the target.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

impl TrainFlags {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            max_iterations: self.max_iterations,
            target_accuracy: self.target,
            eval_every: self.eval_every,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Symbols simulated per grid power.
    #[arg(long, default_value_t = 100_000)]
    pub symbols: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: ModelKind,
    /// Dataset files written by `gen`; pooled, shuffled and split 80/20.
    #[arg(long = "dataset", required = true, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, value_delimiter = ',', default_value = "cnn,bcnn,fcnn,threshold")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Pooled training windows per grid power.
    #[arg(long, default_value_t = 12_500)]
    pub train_windows: usize,
    /// Evaluated windows (bits) per grid power.
    #[arg(long, default_value_t = 100_000)]
    pub test_windows: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct IterationsArgs {
    #[arg(long, value_delimiter = ',', default_value = "cnn,bcnn,fcnn")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Pooled windows per grid power, split 80/20 into train and test.
    #[arg(long, default_value_t = 12_500)]
    pub windows_per_power: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct DatasizeArgs {
    #[arg(long, value_delimiter = ',', default_value = "cnn,bcnn,fcnn")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Received power of the single cell (dBm).
    #[arg(long, default_value_t = -19.5, allow_negative_numbers = true)]
    pub power: f64,
    /// Smallest training-set size; sizes double up to --end.
    #[arg(long, default_value_t = 5_000)]
    pub start: usize,
    #[arg(long, default_value_t = 160_000)]
    pub end: usize,
    #[arg(long, default_value_t = 10_000)]
    pub validation_windows: usize,
    #[arg(long, default_value_t = 200_000)]
    pub test_windows: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Corrupt the conv backward pass; the gradient checks must then fail.
    #[arg(long)]
    pub inject_fault: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A manifest.toml written by gen, train or sweep.
    pub manifest: PathBuf,
    /// Where to write the replayed outputs [default: <manifest dir>/replay].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
