//! Model configuration and invariants.

use serde::{Deserialize, Serialize};

use crate::error::{AvError, Result};

/// Cascading dilated convolution chain at the bottleneck: 3x3 layers
/// applied sequentially with the given dilation rates, each preserving
/// channel count and spatial size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdcConfig {
    pub channels: usize,
    pub dilation_rates: Vec<usize>,
}

impl Default for CdcConfig {
    fn default() -> Self {
        CdcConfig {
            channels: 128,
            dilation_rates: vec![2, 4, 8, 12],
        }
    }
}

impl CdcConfig {
    /// Receptive field of the cascade at its own scale:
    /// `1 + 2 * sum(rates)` for 3x3 kernels.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.dilation_rates.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(AvError::arg("cdc channels must be positive"));
        }
        if self.dilation_rates.is_empty() {
            return Err(AvError::arg("cdc needs at least one dilation rate"));
        }
        if self.dilation_rates.contains(&0) {
            return Err(AvError::arg("cdc dilation rates must be strictly positive"));
        }
        Ok(())
    }
}

/// Multi-branch encoder block configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InceptionBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
}

impl InceptionBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.out_channels.is_multiple_of(4) {
            return Err(AvError::arg(format!(
                "inception out_channels must be divisible by 4 (one quarter per branch), got {}",
                self.out_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(AvError::arg("inception channels must be positive"));
        }
        Ok(())
    }
}

/// Full network configuration. The defaults reproduce the reference
/// architecture: encoder 32/32/64/128, decoder 128/64/32, four output
/// classes, dropout 0.2 in the encoding path, CDC rates 2/4/8/12.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub dropout_rate: f64,
    pub cdc: CdcConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            num_classes: 4,
            encoder_channels: vec![32, 32, 64, 128],
            decoder_channels: vec![128, 64, 32],
            dropout_rate: 0.2,
            cdc: CdcConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(AvError::arg("input_channels must be positive"));
        }
        if self.num_classes < 2 {
            return Err(AvError::arg(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.encoder_channels.len() < 2 {
            return Err(AvError::arg(
                "encoder_channels needs at least two stages (one downsampling)",
            ));
        }
        if self.decoder_channels.len() != self.encoder_channels.len() - 1 {
            return Err(AvError::arg(format!(
                "decoder_channels length {} must be encoder_channels length {} minus one",
                self.decoder_channels.len(),
                self.encoder_channels.len()
            )));
        }
        for &c in &self.encoder_channels {
            if c == 0 || c % 4 != 0 {
                return Err(AvError::arg(format!(
                    "encoder channel counts must be positive multiples of 4, got {c}"
                )));
            }
        }
        if self.decoder_channels.contains(&0) {
            return Err(AvError::arg("decoder channel counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AvError::arg(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        self.cdc.validate()?;
        if self.cdc.channels != *self.encoder_channels.last().unwrap() {
            return Err(AvError::arg(format!(
                "cdc channels {} must equal the last encoder stage {}",
                self.cdc.channels,
                self.encoder_channels.last().unwrap()
            )));
        }
        Ok(())
    }

    /// Number of downsampling (and upsampling) stages.
    pub fn num_stages(&self) -> usize {
        self.encoder_channels.len() - 1
    }

    /// Overall downsampling factor at the bottleneck.
    pub fn bottleneck_stride(&self) -> usize {
        1 << self.num_stages()
    }
}
