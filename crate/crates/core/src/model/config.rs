use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    /// Two ConvLSTM layers with `F` kernels.
    ConvLstm2,
    /// Input conv, two grouped GRU layers with a representation
    /// rearrangement in between, restoring conv.
    GroupedGru2,
    /// As [`Bottleneck::GroupedGru2`] without the second grouped layer.
    GroupedGru1,
}

/// Hyperparameters of one member of the CRN family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrnConfig {
    /// Kernel count `F`; must be even.
    pub kernel_count: usize,
    /// Kernel size `N` (taps along frequency).
    pub kernel_size: usize,
    pub bottleneck: Bottleneck,
    pub groups_layer1: usize,
    pub groups_layer2: usize,
    pub input_compression: bool,
    pub compression_exponent: f64,
    pub feature_len: usize,
    pub strides: Vec<usize>,
    /// Encoder output channels in units of `F/2`; the last entry sets the
    /// bottleneck input width and the restore width `C_rb`.
    pub channel_halves: Vec<usize>,
}

impl CrnConfig {
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn bottleneck_len(&self) -> usize {
        self.feature_len / self.stride_product()
    }

    /// Encoder channel counts, input (4) first.
    pub fn channels(&self) -> Vec<usize> {
        std::iter::once(crate::dsp::INPUT_CHANNELS)
            .chain(self.channel_halves.iter().map(|h| h * self.kernel_count / 2))
            .collect()
    }

    /// Channel count at the bottleneck output.
    pub fn restore_channels(&self) -> usize {
        match self.bottleneck {
            Bottleneck::ConvLstm2 => self.kernel_count,
            _ => *self.channels().last().expect("non-empty encoder"),
        }
    }

    /// Group counts of the grouped GRU layers in order.
    pub fn group_counts(&self) -> Vec<usize> {
        match self.bottleneck {
            Bottleneck::ConvLstm2 => vec![],
            Bottleneck::GroupedGru2 => vec![self.groups_layer1, self.groups_layer2],
            Bottleneck::GroupedGru1 => vec![self.groups_layer1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel_count == 0 || self.kernel_count % 2 != 0 {
            return bad(format!("kernel count F = {} must be positive and even", self.kernel_count));
        }
        if self.kernel_size == 0 {
            return bad("kernel size must be positive".into());
        }
        if self.strides.is_empty() || self.strides.len() != self.channel_halves.len() {
            return bad("one stride and one channel multiplier per encoder layer required".into());
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return bad("encoder strides must be 1 or 2".into());
        }
        if self.channel_halves.contains(&0) {
            return bad("encoder channel multipliers must be positive".into());
        }
        if self.feature_len % self.stride_product() != 0 {
            return bad(format!(
                "feature length {} not divisible by stride product {}",
                self.feature_len,
                self.stride_product()
            ));
        }
        if !(self.compression_exponent > 0.0 && self.compression_exponent <= 1.0) {
            return bad("compression exponent must lie in (0, 1]".into());
        }
        let width = self.bottleneck_len() * self.kernel_count;
        for g in self.group_counts() {
            if g == 0 || width % g != 0 {
                return bad(format!("bottleneck width {width} not divisible into {g} groups"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationStage {
    Fcrn15,
    /// Grouped GRUs replace the ConvLSTMs.
    M1,
    /// F from 32 to 40.
    M2,
    /// N from 12 to 3.
    M3,
    /// Compressed inputs.
    M4,
    /// Single grouped GRU layer (gGCRN16).
    M5,
}

impl AblationStage {
    pub const ALL: [AblationStage; 6] =
        [AblationStage::Fcrn15, AblationStage::M1, AblationStage::M2, AblationStage::M3, AblationStage::M4, AblationStage::M5];

    pub fn key(self) -> &'static str {
        match self {
            AblationStage::Fcrn15 => "fcrn15",
            AblationStage::M1 => "m1",
            AblationStage::M2 => "m2",
            AblationStage::M3 => "m3",
            AblationStage::M4 => "m4",
            AblationStage::M5 => "m5",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationStage::Fcrn15 => "FCRN15",
            AblationStage::M1 => "+(1) grouped GRUs",
            AblationStage::M2 => "+(2) F=40",
            AblationStage::M3 => "+(3) N=3",
            AblationStage::M4 => "+(4) input compression",
            AblationStage::M5 => "+(5) = gGCRN16",
        }
    }

    /// Published complexity of the stage as `(parameters, FLOPS)`.
    pub fn published(self) -> (f64, f64) {
        match self {
            AblationStage::Fcrn15 => (1.0e6, 2011e6),
            AblationStage::M1 => (1.9e6, 1862e6),
            AblationStage::M2 => (3.1e6, 2752e6),
            AblationStage::M3 => (3.1e6, 641e6),
            AblationStage::M4 => (3.1e6, 641e6),
            AblationStage::M5 => (1.3e6, 583e6),
        }
    }
}

impl fmt::Display for AblationStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AblationStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|st| st.key() == k || (k == "ggcrn16" && *st == AblationStage::M5))
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (expected fcrn15, m1..m5)")))
    }
}

/// Configuration of an ablation stage; each stage changes exactly one aspect
/// of its predecessor.
pub fn apply_ablation(stage: AblationStage) -> CrnConfig {
    let mut c = CrnConfig {
        kernel_count: 32,
        kernel_size: 12,
        bottleneck: Bottleneck::ConvLstm2,
        groups_layer1: 8,
        groups_layer2: 6,
        input_compression: false,
        compression_exponent: 0.3,
        feature_len: 264,
        strides: vec![1, 2, 1, 2, 1, 2],
        channel_halves: vec![1, 1, 1, 2, 2, 6],
    };
    if stage == AblationStage::Fcrn15 {
        return c;
    }
    c.bottleneck = Bottleneck::GroupedGru2;
    if stage == AblationStage::M1 {
        return c;
    }
    c.kernel_count = 40;
    c.groups_layer1 = 10;
    if stage == AblationStage::M2 {
        return c;
    }
    c.kernel_size = 3;
    if stage == AblationStage::M3 {
        return c;
    }
    c.input_compression = true;
    if stage == AblationStage::M4 {
        return c;
    }
    c.bottleneck = Bottleneck::GroupedGru1;
    c
}
