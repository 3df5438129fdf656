use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::tensor::ConvSpec;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PFFNetConfig {
    /// Kernel of the full-resolution stem convolution.
    pub stem_kernel: usize,
    /// Channels produced by the stem; doubled at every encoder level.
    pub base_channels: usize,
    /// Number of stride-2 encoder (and mirrored decoder) levels.
    pub encoder_levels: usize,
    /// Residual blocks in the bottleneck transformation.
    pub res_blocks: usize,
    /// Fuse encoder maps into the decoder by channel-wise addition.
    pub skip_connections: bool,
    pub image_channels: usize,
}

impl Default for PFFNetConfig {
    fn default() -> Self {
        PFFNetConfig {
            stem_kernel: 11,
            base_channels: 16,
            encoder_levels: 4,
            res_blocks: 18,
            skip_connections: true,
            image_channels: 3,
        }
    }
}

impl PFFNetConfig {
    /// Desk-scale profile used for smoke training and tests.
    pub fn tiny() -> Self {
        PFFNetConfig {
            base_channels: 8,
            encoder_levels: 2,
            res_blocks: 2,
            ..Self::default()
        }
    }

    pub fn with_res_blocks(self, res_blocks: usize) -> Self {
        PFFNetConfig { res_blocks, ..self }
    }

    pub fn with_skips(self, skip_connections: bool) -> Self {
        PFFNetConfig {
            skip_connections,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_kernel == 0 || self.stem_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("stem_kernel must be odd, got {}", self.stem_kernel)));
        }
        if self.base_channels == 0 || self.image_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.encoder_levels == 0 || self.encoder_levels > 8 {
            return Err(Error::Config(format!(
                "encoder_levels must be in 1..=8, got {}",
                self.encoder_levels
            )));
        }
        if self.res_blocks == 0 {
            return Err(Error::Config("res_blocks must be at least 1".into()));
        }
        Ok(())
    }

    /// Channels of the encoder map at `level` (`base * 2^level`).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.encoder_levels)
    }

    /// Input extents must be divisible by this (`2^levels`).
    pub fn size_multiple(&self) -> usize {
        1 << self.encoder_levels
    }

    pub fn stem_spec(&self) -> ConvSpec {
        ConvSpec {
            kernel: self.stem_kernel,
            stride: 1,
            pad: self.stem_kernel / 2,
            in_channels: self.image_channels,
            out_channels: self.base_channels,
        }
    }

    pub fn down_spec(&self, level: usize) -> ConvSpec {
        resample(self.channels(level - 1), self.channels(level))
    }

    pub fn block_spec(&self) -> ConvSpec {
        let c = self.bottleneck_channels();
        ConvSpec {
            kernel: 3,
            stride: 1,
            pad: 1,
            in_channels: c,
            out_channels: c,
        }
    }

    /// Transposed convolution taking level `level` to `level - 1`.
    pub fn up_spec(&self, level: usize) -> ConvSpec {
        resample(self.channels(level), self.channels(level - 1))
    }

    pub fn output_spec(&self) -> ConvSpec {
        ConvSpec {
            kernel: 3,
            stride: 1,
            pad: 1,
            in_channels: self.base_channels,
            out_channels: self.image_channels,
        }
    }
}

fn resample(in_channels: usize, out_channels: usize) -> ConvSpec {
    ConvSpec {
        kernel: 3,
        stride: 2,
        pad: 1,
        in_channels,
        out_channels,
    }
}

impl KeyValue for PFFNetConfig {
    fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("stem_kernel".into(), self.stem_kernel.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("encoder_levels".into(), self.encoder_levels.to_string()),
            ("res_blocks".into(), self.res_blocks.to_string()),
            ("skip_connections".into(), self.skip_connections.to_string()),
            ("image_channels".into(), self.image_channels.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "stem_kernel" => self.stem_kernel = kv::value(key, value)?,
            "base_channels" => self.base_channels = kv::value(key, value)?,
            "encoder_levels" => self.encoder_levels = kv::value(key, value)?,
            "res_blocks" => self.res_blocks = kv::value(key, value)?,
            "skip_connections" => self.skip_connections = kv::value(key, value)?,
            "image_channels" => self.image_channels = kv::value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
