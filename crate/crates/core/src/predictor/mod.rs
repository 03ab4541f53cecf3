//! A miniature encoder-decoder that maps an image to a segmentation field,
//! trained on the composite objective with exact reverse-mode gradients.
//!
//! Topology per level: two 3x3 convolutions with ReLU, 2x2 max pooling on
//! the way down; nearest-neighbour upsampling followed by a 3x3 convolution,
//! skip concatenation and two 3x3 convolutions with ReLU on the way up; a
//! final 1x1 convolution and sigmoid. All convolutions use edge-duplication
//! padding so spatial sizes are preserved.

mod layers;
mod net;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use net::{backward, forward, predict_mask, Gradient};
pub use params::{init_params, ConvSpec, ParamSet};
pub use train::{mean_dice, train, train_on, EpochRecord, TrainConfig, TrainLog, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels of the first level; each level doubles them.
    pub base_channels: usize,
    /// Dropout on the bottleneck output during training; 0 disables it.
    pub dropout_rate: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            dropout_rate: 0.0,
        }
    }
}

impl ArchConfig {
    pub fn new(depth: usize, base_channels: usize) -> Self {
        Self {
            depth,
            base_channels,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return invalid("arch.depth must be at least 1");
        }
        if self.depth > 8 {
            return invalid(format!("arch.depth {} is too large", self.depth));
        }
        if self.base_channels == 0 {
            return invalid("arch.base_channels must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid(format!("arch.dropout_rate must lie in [0,1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    /// Channels at level `l` (`l == depth` is the bottleneck).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input sizes must be divisible by `2^depth`.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return invalid(format!(
                "input {height}x{width} is not divisible by 2^depth = {m} (depth {})",
                self.depth
            ));
        }
        Ok(())
    }
}
