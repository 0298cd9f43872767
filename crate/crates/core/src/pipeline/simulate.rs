use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::vote;
use crate::d4::{OrientationLabel, TransformTables};
use crate::error::{Error, Result};

/// Outcome of voting with a simulated classifier that errs independently on
/// each view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyVotingStats {
    pub trials: usize,
    pub error_rate: f64,
    pub direct_accuracy: f64,
    pub voting_accuracy: f64,
    /// Standard error of the paired per-trial difference (voting − direct).
    pub std_error: f64,
}

impl NoisyVotingStats {
    /// Voting advantage in units of its standard error.
    pub fn z_score(&self) -> f64 {
        let gain = self.voting_accuracy - self.direct_accuracy;
        if self.std_error == 0.0 {
            if gain > 0.0 { f64::INFINITY } else { 0.0 }
        } else {
            gain / self.std_error
        }
    }
}

/// Each trial draws a true label `t`; the classifier sees view `j` (true
/// label `compose(j, t)`) and answers correctly with probability
/// `1 - error_rate`, otherwise with one of the 7 wrong labels uniformly.
/// Direct prediction is the answer on view 0.
pub fn simulate_noisy_voting(
    tables: &TransformTables,
    error_rate: f64,
    trials: usize,
    seed: u64,
) -> Result<NoisyVotingStats> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::Range(format!("error rate {error_rate} not in [0, 1]")));
    }
    if trials < 2 {
        return Err(Error::Argument("need at least 2 trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut direct, mut voting) = (0usize, 0usize);
    let (mut sum_d, mut sum_d2) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let t = OrientationLabel::new(rng.gen_range(0..8)).expect("in range");
        let mut recovered = [OrientationLabel::IDENTITY; 8];
        let mut first = t;
        for j in OrientationLabel::all() {
            let truth = tables.compose(j, t);
            let predicted = if rng.gen_bool(error_rate) {
                let k = rng.gen_range(0..7u8);
                let k = if k >= truth.value() { k + 1 } else { k };
                OrientationLabel::new(k).expect("in range")
            } else {
                truth
            };
            if j == OrientationLabel::IDENTITY {
                first = predicted;
            }
            recovered[j.index()] = tables.invert_label(j, predicted);
        }
        let d_ok = (first == t) as i32;
        let v_ok = (vote(&recovered) == t) as i32;
        direct += d_ok as usize;
        voting += v_ok as usize;
        let diff = (v_ok - d_ok) as f64;
        sum_d += diff;
        sum_d2 += diff * diff;
    }
    let n = trials as f64;
    let mean = sum_d / n;
    let var = (sum_d2 - n * mean * mean) / (n - 1.0);
    Ok(NoisyVotingStats {
        trials,
        error_rate,
        direct_accuracy: direct as f64 / n,
        voting_accuracy: voting as f64 / n,
        std_error: (var.max(0.0) / n).sqrt(),
    })
}
