use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DEFAULT_BEAT_LEN, N_CLASSES};
use crate::tensor::{conv_out_len, pool_out_len};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Cnn,
    CnnLstm,
    CnnLstmAttn,
    Resnet1d,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Cnn,
        Architecture::CnnLstm,
        Architecture::CnnLstmAttn,
        Architecture::Resnet1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::CnnLstm => "cnn_lstm",
            Architecture::CnnLstmAttn => "cnn_lstm_attn",
            Architecture::Resnet1d => "resnet1d",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Architecture::CnnLstm | Architecture::CnnLstmAttn)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Everything needed to rebuild a model's parameter shapes.
///
/// `channels` is the ConvNormPool plan for the convolutional and recurrent
/// models and the per-stage widths for `resnet1d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub architecture: Architecture,
    pub channels: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub lstm_dropout: f64,
    pub attention_dim: usize,
    pub stem_channels: usize,
    pub blocks_per_stage: usize,
    pub n_classes: usize,
    pub input_len: usize,
}

pub const CNP_KERNEL: usize = 5;
pub const CNP_PADDING: usize = 2;
pub const RES_KERNEL: usize = 3;
pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 2;
pub const STEM_PADDING: usize = 3;

impl ModelDescriptor {
    /// The default configuration of each architecture.
    pub fn new(architecture: Architecture) -> Self {
        let channels = match architecture {
            Architecture::Cnn => vec![128, 64, 32],
            Architecture::CnnLstm | Architecture::CnnLstmAttn => vec![64, 32],
            Architecture::Resnet1d => vec![32, 64, 128],
        };
        Self {
            architecture,
            channels,
            lstm_hidden: 64,
            lstm_layers: 2,
            lstm_dropout: 0.2,
            attention_dim: 64,
            stem_channels: 32,
            blocks_per_stage: 2,
            n_classes: N_CLASSES,
            input_len: DEFAULT_BEAT_LEN,
        }
    }

    /// Length of the final convolutional feature maps, or a ConfigError when
    /// the plan shrinks the input to nothing.
    pub fn feature_len(&self) -> Result<usize> {
        let too_short = || {
            Error::Config(format!(
                "input length {} is too short for the {} channel plan {:?}",
                self.input_len, self.architecture, self.channels
            ))
        };
        let mut len = self.input_len;
        match self.architecture {
            Architecture::Resnet1d => {
                len = conv_out_len(len, STEM_KERNEL, STEM_STRIDE, STEM_PADDING).ok_or_else(too_short)?;
                len = pool_out_len(len, 2, 2).ok_or_else(too_short)?;
                for _ in &self.channels {
                    len = conv_out_len(len, RES_KERNEL, 2, 1).ok_or_else(too_short)?;
                }
            }
            _ => {
                for _ in &self.channels {
                    len = pool_out_len(len, 2, 2).ok_or_else(too_short)?;
                }
            }
        }
        Ok(len)
    }

    /// Channels of the final convolutional feature maps.
    pub fn feature_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("invalid channel plan {:?}", self.channels)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be at least 2, got {}", self.n_classes)));
        }
        if self.architecture.is_recurrent() && (self.lstm_hidden == 0 || self.lstm_layers == 0) {
            return Err(Error::Config("LSTM hidden size and layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.lstm_dropout)));
        }
        if self.architecture == Architecture::CnnLstmAttn && self.attention_dim == 0 {
            return Err(Error::Config("attention dimension must be positive".into()));
        }
        if self.architecture == Architecture::Resnet1d && (self.stem_channels == 0 || self.blocks_per_stage == 0) {
            return Err(Error::Config("resnet stem channels and blocks per stage must be positive".into()));
        }
        self.feature_len()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_lengths() {
        assert_eq!(ModelDescriptor::new(Architecture::Cnn).feature_len().unwrap(), 23);
        assert_eq!(ModelDescriptor::new(Architecture::CnnLstm).feature_len().unwrap(), 46);
        assert_eq!(ModelDescriptor::new(Architecture::Resnet1d).feature_len().unwrap(), 6);
    }

    #[test]
    fn invalid_plans() {
        let mut d = ModelDescriptor::new(Architecture::Cnn);
        d.channels = vec![];
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        d.channels = vec![8, 0];
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        d.channels = vec![4; 9];
        assert!(matches!(d.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        for a in Architecture::ALL {
            let d = ModelDescriptor::new(a);
            assert_eq!(ModelDescriptor::from_json(&d.to_json().unwrap()).unwrap(), d);
            assert_eq!(a.as_str().parse::<Architecture>().unwrap(), a);
        }
        assert!(ModelDescriptor::from_json(r#"{"architecture":"cnn"}"#).is_err());
    }
}
