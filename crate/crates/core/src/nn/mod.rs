//! A minimal convolutional classifier: three conv/ReLU/max-pool stages,
//! a hidden dense layer and an 8-way softmax output.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod network;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::d4::OrientationLabel;
use crate::error::{Error, Result};

pub use adam::{sgd_adam_step, Adam};
pub use checkpoint::{
    check_compatible, load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint,
    write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{softmax, softmax_cross_entropy, Conv2d, Dense, Layer};
pub use network::{BatchGradients, Gradients, Network};
pub use tensor::Tensor;

/// Floating-point type the network can run in. `f32` is used for training
/// and inference; `f64` exists for tight gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

/// Shape of the classifier. Every parameter tensor shape follows from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Side of the square input; must be divisible by 8.
    pub input_size: usize,
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    pub hidden_units: usize,
    pub classes: usize,
    pub seed: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 64,
            in_channels: 3,
            conv_channels: [8, 16, 32],
            kernel: 3,
            hidden_units: 64,
            classes: 8,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes != OrientationLabel::COUNT {
            return Err(Error::Argument(format!(
                "classes must be 8, got {}",
                self.classes
            )));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return Err(Error::Argument(format!(
                "input_size {} is not a positive multiple of 8",
                self.input_size
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "kernel {} must be odd",
                self.kernel
            )));
        }
        if self.in_channels == 0 || self.hidden_units == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Argument("channel and unit counts must be positive".into()));
        }
        Ok(())
    }

    /// Length of the flattened feature vector after the third pooling.
    pub fn flat_features(&self) -> usize {
        let side = self.input_size / 8;
        side * side * self.conv_channels[2]
    }
}

/// Softmax output over the 8 orientation labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub probs: [f32; 8],
}

impl PredictionDistribution {
    pub fn uniform() -> Self {
        PredictionDistribution { probs: [0.125; 8] }
    }

    /// Most probable label; ties resolve to the smaller index.
    pub fn argmax(&self) -> OrientationLabel {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        OrientationLabel::new(best as u8).expect("index < 8")
    }

    pub fn prob(&self, label: OrientationLabel) -> f32 {
        self.probs[label.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneHotLabel {
    pub onehot: [f32; 8],
}

impl From<OrientationLabel> for OneHotLabel {
    fn from(label: OrientationLabel) -> Self {
        let mut onehot = [0.0; 8];
        onehot[label.index()] = 1.0;
        OneHotLabel { onehot }
    }
}

pub const LOSS_EPSILON: f64 = 1e-12;

/// Categorical cross-entropy `-Σ O_i ln(Ô_i + ε)`.
pub fn loss(pred: &PredictionDistribution, label: &OneHotLabel) -> f64 {
    pred.probs
        .iter()
        .zip(label.onehot.iter())
        .map(|(&p, &o)| -(o as f64) * (p as f64 + LOSS_EPSILON).ln())
        .sum::<f64>()
        .max(0.0)
}
