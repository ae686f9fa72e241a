use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which branches are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Encoder and density branch; counts by integrating the density map.
    DensityOnly,
    /// Encoder, plain transformer encoder and query decoder.
    RegressionOnly,
    /// Both branches with the plain transformer encoder.
    DualTte,
    /// Both branches with density features merged before every encoder layer.
    DualDete,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DensityOnly,
        Variant::RegressionOnly,
        Variant::DualTte,
        Variant::DualDete,
    ];

    pub fn has_density(self) -> bool {
        self != Variant::RegressionOnly
    }

    pub fn has_regression(self) -> bool {
        self != Variant::DensityOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DensityOnly => "density-only",
            Variant::RegressionOnly => "regression-only",
            Variant::DualTte => "dual-tte",
            Variant::DualDete => "dual-dete",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Transformer encoder layers.
    pub layers: usize,
    /// Backbone output channels.
    pub encoder_channels: usize,
    /// Density-branch feature channels.
    pub density_channels: usize,
    /// Common transformer width.
    pub hidden: usize,
    pub queries: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    /// Backbone stride; a power of two.
    pub downsample: usize,
    /// Side of the square training crop and inference tile.
    pub crop: usize,
}

impl ModelConfig {
    /// Small configuration for CPU-scale experiments on synthetic scenes.
    pub fn desk() -> Self {
        Self {
            variant: Variant::DualDete,
            layers: 2,
            encoder_channels: 64,
            density_channels: 64,
            hidden: 32,
            queries: 128,
            decoder_layers: 2,
            heads: 4,
            downsample: 8,
            crop: 64,
        }
    }

    /// Full-scale configuration: six encoder layers, 700 queries, 256-pixel crops.
    pub fn full() -> Self {
        Self {
            layers: 6,
            queries: 700,
            crop: 256,
            ..Self::desk()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers < 2 {
            return fail(format!("layers must be at least 2, got {}", self.layers));
        }
        if self.queries == 0 {
            return fail("queries must be positive".into());
        }
        if !self.downsample.is_power_of_two() {
            return fail(format!("downsample {} is not a power of two", self.downsample));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.hidden % 2 != 0 {
            return fail(format!("hidden {} must be even for the position embedding", self.hidden));
        }
        if self.encoder_channels == 0 || self.density_channels == 0 || self.decoder_layers == 0 {
            return fail("channel and layer counts must be positive".into());
        }
        if self.crop == 0 || self.crop % self.downsample != 0 {
            return fail(format!("crop {} is not a multiple of downsample {}", self.crop, self.downsample));
        }
        Ok(())
    }
}
