//! Training, transfer, prediction, evaluation and sweeps.

mod eval;
mod predict;
mod simulate;
mod sweep;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgops::AugmentConfig;
use crate::nn::NetworkConfig;

pub use eval::{evaluate, evaluate_both, evaluate_probability_sum, EvalReport};
pub use predict::{
    predict_direct, predict_voting, predict_voting_probability_sum, prepare_for_inference,
    reorient, vote, voting_trace, OrientationClassifier, VotingTrace,
};
pub use simulate::{simulate_noisy_voting, NoisyVotingStats};
pub use sweep::{sensitivity_sweep, SweepCell, SweepRow, SweepTable, DEFAULT_FRACTIONS};
pub use train::{train, train_with_progress, transfer, transfer_with_progress, write_train_log, EpochLog, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Voting,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::Voting => "voting",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Method::Direct),
            "voting" => Ok(Method::Voting),
            other => Err(Error::Argument(format!("unknown method `{other}` (expected direct or voting)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Share of patients used for training when a split is derived from it.
    pub train_fraction: f64,
    /// Leave convolution parameters untouched during transfer.
    pub freeze_conv: bool,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    /// Written after every finite epoch; reported if training later diverges.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            seed: 1,
            train_fraction: 0.5,
            freeze_conv: false,
            network: NetworkConfig::default(),
            augment: AugmentConfig::default(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Argument(format!("train fraction {} not in (0, 1]", self.train_fraction)));
        }
        self.network.validate()
    }

    /// Fine-tuning defaults derived from a from-scratch config: a tenth of
    /// the learning rate and a quarter of the epochs (rounded up).
    pub fn for_transfer(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr / 10.0,
            epochs: self.epochs.div_ceil(4),
            ..self.clone()
        }
    }

    /// Split ratios (train, val, test) with the non-training share divided 3:2.
    pub fn split_ratios(&self) -> [f64; 3] {
        let rest = 1.0 - self.train_fraction;
        [self.train_fraction, rest * 0.6, rest * 0.4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_transfer() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        let ratios = cfg.split_ratios();
        assert!((ratios[0] - 0.5).abs() < 1e-12 && (ratios[1] - 0.3).abs() < 1e-12 && (ratios[2] - 0.2).abs() < 1e-12);
        let t = cfg.for_transfer();
        assert_eq!(t.epochs, 8);
        assert!((t.lr - 1e-4).abs() < 1e-9);
        assert!(TrainConfig { epochs: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { train_fraction: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("voting".parse::<Method>().unwrap(), Method::Voting);
        assert_eq!("Direct".parse::<Method>().unwrap(), Method::Direct);
        assert!("vote".parse::<Method>().is_err());
    }
}
