use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistancePreset {
    #[serde(rename = "d10km")]
    D10km,
    #[serde(rename = "d15km")]
    D15km,
    #[serde(rename = "d20km")]
    D20km,
}

impl DistancePreset {
    pub const ALL: [Self; 3] = [Self::D10km, Self::D15km, Self::D20km];

    pub fn name(self) -> &'static str {
        match self {
            Self::D10km => "d10km",
            Self::D15km => "d15km",
            Self::D20km => "d20km",
        }
    }

    pub fn isi_taps(self) -> Vec<f64> {
        match self {
            Self::D10km => vec![0.05, 0.9, 0.05],
            Self::D15km => vec![0.08, 0.12, 0.6, 0.12, 0.08],
            Self::D20km => vec![0.1, 0.15, 0.5, 0.15, 0.1],
        }
    }
}

impl fmt::Display for DistancePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistancePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown distance preset `{s}` (expected d10km, d15km or d20km)")))
    }
}

/// `snr_db = slope_db_per_db · (power_dbm − offset_dbm)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub slope_db_per_db: f64,
    pub offset_dbm: f64,
}

impl Calibration {
    pub const DEFAULT: Self = Self {
        slope_db_per_db: 0.5,
        offset_dbm: -32.0,
    };
}

/// Eight received powers, 0.5 dB apart, spanning 3.5 dB.
pub fn default_power_grid() -> Vec<f64> {
    (0..8).map(|i| -19.5 + 0.5 * f64::from(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub distance: DistancePreset,
    pub isi_taps: Vec<f64>,
    pub a1: f64,
    pub a3: f64,
    pub sps: usize,
    pub power_grid_dbm: Vec<f64>,
    pub calibration: Calibration,
}

/// On-disk layout: one `[channel]` section plus `[calibration]`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    channel: ChannelSection,
    calibration: Calibration,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    distance: DistancePreset,
    isi_taps: Vec<f64>,
    a1: f64,
    a3: f64,
    sps: usize,
    power_grid_dbm: Vec<f64>,
}

impl ChannelConfig {
    pub fn preset(distance: DistancePreset) -> Self {
        Self {
            distance,
            isi_taps: distance.isi_taps(),
            a1: 1.0,
            a3: -0.15,
            sps: super::SAMPLES_PER_SYMBOL,
            power_grid_dbm: default_power_grid(),
            calibration: Calibration::DEFAULT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.isi_taps.is_empty() || self.isi_taps.len() % 2 == 0 {
            return Err(Error::Config("isi_taps must have odd length".into()));
        }
        let dc: f64 = self.isi_taps.iter().sum();
        if (dc - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("isi_taps must sum to 1, got {dc}")));
        }
        if self.sps != super::SAMPLES_PER_SYMBOL {
            return Err(Error::Config(format!("sps must be 4, got {}", self.sps)));
        }
        if !(self.a1 > 0.0) || !self.a3.is_finite() {
            return Err(Error::Config("a1 must be positive and a3 finite".into()));
        }
        let grid = &self.power_grid_dbm;
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("power_grid_dbm must be strictly ascending".into()));
        }
        if grid[grid.len() - 1] - grid[0] < 3.5 - 1e-9 {
            return Err(Error::Config("power_grid_dbm must span at least 3.5 dB".into()));
        }
        if !(self.calibration.slope_db_per_db > 0.0) || !self.calibration.offset_dbm.is_finite() {
            return Err(Error::Config("calibration slope must be positive".into()));
        }
        Ok(())
    }

    pub fn snr_db(&self, power_dbm: f64) -> f64 {
        super::power_to_snr(power_dbm, &self.calibration)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let c = file.channel;
        let cfg = Self {
            distance: c.distance,
            isi_taps: c.isi_taps,
            a1: c.a1,
            a3: c.a3,
            sps: c.sps,
            power_grid_dbm: c.power_grid_dbm,
            calibration: file.calibration,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            channel: ChannelSection {
                distance: self.distance,
                isi_taps: self.isi_taps.clone(),
                a1: self.a1,
                a3: self.a3,
                sps: self.sps,
                power_grid_dbm: self.power_grid_dbm.clone(),
            },
            calibration: self.calibration,
        };
        toml::to_string(&file).expect("plain data serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for d in DistancePreset::ALL {
            let cfg = ChannelConfig::preset(d);
            cfg.validate().unwrap();
            assert_eq!(cfg.power_grid_dbm.len(), 8);
            assert_eq!(d.name().parse::<DistancePreset>().unwrap(), d);
        }
        assert!("d5km".parse::<DistancePreset>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ChannelConfig::preset(DistancePreset::D15km);
        assert_eq!(ChannelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn missing_field_is_rejected() {
        let text = ChannelConfig::preset(DistancePreset::D10km).to_toml();
        let broken: String = text.lines().filter(|l| !l.starts_with("a3")).collect::<Vec<_>>().join("\n");
        assert!(ChannelConfig::from_toml(&broken).is_err());
    }

    #[test]
    fn validation_catches_bad_taps_and_grid() {
        let mut cfg = ChannelConfig::preset(DistancePreset::D10km);
        cfg.isi_taps = vec![0.5, 0.6, 0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = ChannelConfig::preset(DistancePreset::D10km);
        cfg.power_grid_dbm = vec![-18.0, -17.0, -16.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shipped_configs_match_presets() {
        let shipped = [
            include_str!("../../../../configs/d10km.toml"),
            include_str!("../../../../configs/d15km.toml"),
            include_str!("../../../../configs/d20km.toml"),
        ];
        for (d, text) in DistancePreset::ALL.into_iter().zip(shipped) {
            assert_eq!(ChannelConfig::from_toml(text).unwrap(), ChannelConfig::preset(d));
        }
    }
}
