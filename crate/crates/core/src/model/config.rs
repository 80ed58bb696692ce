use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkProfile {
    Vgg19bnFull,
    VggMini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub convs: usize,
    pub width: usize,
}

/// Position of the shared representation: zero-based `(block, conv)`.
/// The paper's conv-3-1 is `(2, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TapLayer {
    pub block: usize,
    pub conv: usize,
}

impl TapLayer {
    pub const CONV_3_1: TapLayer = TapLayer { block: 2, conv: 0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkConfig {
    pub profile: TrunkProfile,
    pub blocks: Vec<BlockConfig>,
    pub tap: TapLayer,
    pub batchnorm: bool,
}

impl TrunkConfig {
    /// Three blocks of widths 32, 64 and 128 with two convolutions each.
    pub fn vgg_mini() -> Self {
        Self::vgg_mini_with_widths([32, 64, 128])
    }

    pub fn vgg_mini_with_widths(widths: [usize; 3]) -> Self {
        Self {
            profile: TrunkProfile::VggMini,
            blocks: widths
                .iter()
                .map(|&width| BlockConfig { convs: 2, width })
                .collect(),
            tap: TapLayer::CONV_3_1,
            batchnorm: true,
        }
    }

    /// VGG-19 with batchnorm: 2, 2, 4, 4, 4 convolutions of widths 64 to 512.
    pub fn vgg19bn_full() -> Self {
        let spec = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];
        Self {
            profile: TrunkProfile::Vgg19bnFull,
            blocks: spec
                .iter()
                .map(|&(convs, width)| BlockConfig { convs, width })
                .collect(),
            tap: TapLayer::CONV_3_1,
            batchnorm: true,
        }
    }

    pub fn tap_channels(&self) -> usize {
        self.blocks[self.tap.block].width
    }

    /// Number of 2x poolings applied before the tap (one after every block).
    pub fn poolings_before_tap(&self) -> usize {
        self.tap.block
    }

    pub fn output_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.width)
    }
}

/// Fully convolutional head: 3x3 conv, 1x1 conv, 1x1 conv to the classes,
/// then global average pooling and log-softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub widths: [usize; 2],
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub neurons: usize,
    /// Standard deviation of the position jitter applied in train mode;
    /// zero samples deterministically at the learned position.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub classes: usize,
    pub trunk: TrunkConfig,
    pub head: HeadConfig,
    pub readout: ReadoutConfig,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn vgg_mini(input_size: usize, classes: usize, neurons: usize) -> Self {
        Self {
            input_size,
            classes,
            trunk: TrunkConfig::vgg_mini(),
            head: HeadConfig {
                widths: [128, 128],
                dropout_rate: 0.5,
            },
            readout: ReadoutConfig {
                neurons,
                jitter: 0.0,
            },
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn vgg19bn_full(input_size: usize, classes: usize, neurons: usize) -> Self {
        Self {
            trunk: TrunkConfig::vgg19bn_full(),
            head: HeadConfig {
                widths: [512, 512],
                dropout_rate: 0.5,
            },
            ..Self::vgg_mini(input_size, classes, neurons)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trunk;
        if t.blocks.len() < 3 {
            return Err(Error::config("trunk needs at least three blocks"));
        }
        if t.blocks.iter().any(|b| b.convs == 0 || b.width == 0) {
            return Err(Error::config("every trunk block needs at least one conv of nonzero width"));
        }
        if t.tap.block != 2 {
            return Err(Error::config(
                "tap layer must sit in the third block, after exactly two poolings",
            ));
        }
        if t.tap.conv >= t.blocks[t.tap.block].convs {
            return Err(Error::config("tap conv index exceeds block size"));
        }
        let down = 1usize << t.blocks.len();
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::config(format!(
                "input size {} is not divisible by the trunk downsampling {down}",
                self.input_size
            )));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.head.widths.contains(&0) {
            return Err(Error::config("head widths must be nonzero"));
        }
        if !(0.0..1.0).contains(&self.head.dropout_rate) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        if self.readout.jitter < 0.0 || !self.readout.jitter.is_finite() {
            return Err(Error::config("readout jitter must be finite and nonnegative"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("invalid batchnorm eps/momentum"));
        }
        Ok(())
    }

    pub fn tap_size(&self) -> usize {
        self.input_size >> self.trunk.poolings_before_tap()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_put_the_tap_after_two_pools() {
        for cfg in [
            ModelConfig::vgg_mini(64, 10, 8),
            ModelConfig::vgg19bn_full(64, 200, 8),
        ] {
            cfg.validate().unwrap();
            assert_eq!(cfg.tap_size(), 16);
        }
        assert_eq!(TrunkConfig::vgg19bn_full().tap_channels(), 256);
        assert_eq!(TrunkConfig::vgg_mini().tap_channels(), 128);
    }

    #[test]
    fn misplaced_tap_is_rejected() {
        let mut cfg = ModelConfig::vgg_mini(64, 10, 8);
        cfg.trunk.tap = TapLayer { block: 1, conv: 0 };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn digest_tracks_content() {
        let a = ModelConfig::vgg_mini(64, 10, 8);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.readout.neurons = 9;
        assert_ne!(a.digest(), b.digest());
    }
}
