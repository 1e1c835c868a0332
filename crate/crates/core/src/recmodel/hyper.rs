use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scoring channels: ID, text, visual.
pub const CHANNELS: usize = 3;

/// Architecture and optimisation settings of the factor-attention recommender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Number of latent factors `F`; must divide `dim`.
    pub factors: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub text_hidden: usize,
    pub image_hidden: usize,
    pub attn_hidden: usize,
    /// Sampled negatives per positive.
    pub negatives: usize,
    pub margin: f64,
    pub dcor_weight: f64,
    /// Rows of each mini-batch used as the distance-correlation sample.
    pub dcor_rows: usize,
    pub weight_decay: f64,
    pub lr: f64,
    pub dropout: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub init_std: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            dim: 32,
            factors: 4,
            text_dim: 64,
            image_dim: 64,
            text_hidden: 64,
            image_hidden: 64,
            attn_hidden: 32,
            negatives: 4,
            margin: 1.0,
            dcor_weight: 0.01,
            dcor_rows: 64,
            weight_decay: 1e-5,
            lr: 1e-3,
            dropout: 0.2,
            local_epochs: 2,
            batch_size: 256,
            init_std: 0.01,
        }
    }
}

impl HyperParams {
    pub fn factor_dim(&self) -> usize {
        self.dim / self.factors
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("dim", self.dim),
            ("factors", self.factors),
            ("text_dim", self.text_dim),
            ("image_dim", self.image_dim),
            ("text_hidden", self.text_hidden),
            ("image_hidden", self.image_hidden),
            ("attn_hidden", self.attn_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.dim % self.factors != 0 {
            return Err(Error::invalid(format!(
                "factors ({}) must divide dim ({})",
                self.factors, self.dim
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.dcor_weight >= 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("weight_decay and dcor_weight must be >= 0"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::invalid("init_std must be positive"));
        }
        Ok(())
    }
}
