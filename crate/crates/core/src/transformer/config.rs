use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which decoder position feeds the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Last sequence position (the frame right before the predicted one).
    #[default]
    Last,
    /// Mean over all sequence positions.
    Mean,
}

impl Readout {
    pub(crate) fn code(self) -> u8 {
        match self {
            Readout::Last => 0,
            Readout::Mean => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Readout::Last),
            1 => Some(Readout::Mean),
            _ => None,
        }
    }
}

/// Whether the decoder runs at all.
///
/// `Enabled` feeds the embedded sequence to the decoder, which cross-attends to
/// the encoder's latent of the same sequence. `Disabled` is the single-pipeline
/// ablation: the encoder latent goes straight to the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfContext {
    #[default]
    Enabled,
    Disabled,
}

impl SelfContext {
    pub fn from_enabled(enabled: bool) -> Self {
        if enabled {
            SelfContext::Enabled
        } else {
            SelfContext::Disabled
        }
    }

    pub fn is_enabled(self) -> bool {
        self == SelfContext::Enabled
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub window: usize,
    #[serde(default)]
    pub readout: Readout,
    pub seed: u64,
}

impl ModelConfig {
    /// Reference sizes: width 512, 2 heads, 2 layers, window 10, MLP hidden 2×width.
    pub fn new(feature_dim: usize) -> Self {
        Self::with_model_dim(feature_dim, 512)
    }

    pub fn with_model_dim(feature_dim: usize, model_dim: usize) -> Self {
        Self {
            feature_dim,
            model_dim,
            heads: 2,
            layers: 2,
            mlp_hidden: 2 * model_dim,
            window: 10,
            readout: Readout::Last,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.feature_dim == 0 || self.model_dim == 0 || self.mlp_hidden == 0 {
            return bad("feature_dim, model_dim and mlp_hidden must be positive".into());
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("layers must be positive".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        Ok(())
    }
}
