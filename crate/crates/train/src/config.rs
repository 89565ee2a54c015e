use std::fmt;
use std::str::FromStr;

use geoprior_core::noise::NoiseLevel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the autoencoder sees: nothing, one-hot foreground masks, or
/// geodesic maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    None,
    Binary,
    Geodesic,
}

impl PriorMode {
    pub const ALL: [PriorMode; 3] = [PriorMode::None, PriorMode::Binary, PriorMode::Geodesic];

    pub fn name(self) -> &'static str {
        match self {
            PriorMode::None => "none",
            PriorMode::Binary => "binary",
            PriorMode::Geodesic => "geodesic",
        }
    }

    /// Row label in reports.
    pub fn method(self) -> &'static str {
        match self {
            PriorMode::None => "Seg. Net.",
            PriorMode::Binary => "Binary prior",
            PriorMode::Geodesic => "Geodesic prior",
        }
    }

    pub fn uses_gae(self) -> bool {
        self != PriorMode::None
    }
}

impl fmt::Display for PriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown prior mode {s:?} (none, binary, geodesic)")))
    }
}

/// Which labels a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    Clean,
    L1,
    L2,
}

impl LabelSource {
    pub const ALL: [LabelSource; 3] = [LabelSource::Clean, LabelSource::L1, LabelSource::L2];

    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Clean => "clean",
            LabelSource::L1 => "L1",
            LabelSource::L2 => "L2",
        }
    }

    pub fn noise_level(self) -> Option<NoiseLevel> {
        match self {
            LabelSource::Clean => None,
            LabelSource::L1 => Some(NoiseLevel::L1),
            LabelSource::L2 => Some(NoiseLevel::L2),
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(LabelSource::Clean),
            "L1" | "l1" => Ok(LabelSource::L1),
            "L2" | "l2" => Ok(LabelSource::L2),
            _ => Err(Error::Config(format!("unknown label source {s:?} (clean, L1, L2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the prior term in the segmentor loss.
    pub lambda_gae: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub prior: PriorMode,
    pub labels: LabelSource,
    /// Optional cap on optimizer steps across epochs.
    #[serde(default)]
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            lr: 1e-3,
            lambda_gae: 1.0,
            patience: 10,
            seed: 7,
            prior: PriorMode::None,
            labels: LabelSource::Clean,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gae >= 0.0 && self.lambda_gae.is_finite()) {
            return Err(Error::Config(format!("lambda_gae must be finite and >= 0, got {}", self.lambda_gae)));
        }
        if self.patience == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

/// Patience-based early stopping on a scalar validation score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        EarlyStopping {
            patience,
            higher_is_better,
            best: None,
            wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn update(&mut self, value: f64) -> Verdict {
        let better = match self.best {
            None => true,
            Some(b) if self.higher_is_better => value > b,
            Some(b) => value < b,
        };
        if better {
            self.best = Some(value);
            self.wait = 0;
            return Verdict::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Wait
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_first_bad_epoch() {
        let mut es = EarlyStopping::new(1, false);
        assert_eq!(es.update(1.0), Verdict::Improved);
        assert_eq!(es.update(1.5), Verdict::Stop);
        let mut es = EarlyStopping::new(3, true);
        assert_eq!(es.update(0.5), Verdict::Improved);
        assert_eq!(es.update(0.4), Verdict::Wait);
        assert_eq!(es.update(0.6), Verdict::Improved);
        assert_eq!(es.update(0.6), Verdict::Wait);
        assert_eq!(es.update(0.1), Verdict::Wait);
        assert_eq!(es.update(0.1), Verdict::Stop);
        assert_eq!(es.best(), Some(0.6));
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lambda_gae: -1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("geodesic".parse::<PriorMode>().unwrap(), PriorMode::Geodesic);
        assert!("gd".parse::<PriorMode>().is_err());
        assert_eq!("L2".parse::<LabelSource>().unwrap().noise_level(), Some(NoiseLevel::L2));
    }
}
