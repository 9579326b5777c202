use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of the encoder–decoder transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout_p: f64,
}

impl TransformerConfig {
    /// The standard desk-scale configuration.
    pub fn base(vocab_size: usize) -> Self {
        TransformerConfig {
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ff_dim: 512,
            vocab_size,
            max_src_len: 256,
            max_tgt_len: 64,
            dropout_p: 0.1,
        }
    }

    /// A small configuration that trains in seconds on one CPU core.
    pub fn tiny(vocab_size: usize) -> Self {
        TransformerConfig {
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ff_dim: 64,
            vocab_size,
            max_src_len: 96,
            max_tgt_len: 24,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.ff_dim == 0 {
            return bad("d_model, n_heads and ff_dim must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size < crate::vocab::RESERVED.len() {
            return bad("vocabulary smaller than the reserved set");
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            return bad("sequence limits must leave room for <bos> and <eos>");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let ff = self.ff_dim;
        let layer_norm = 2 * d;
        let attention = 4 * (d * d + d);
        let feed_forward = d * ff + ff + ff * d + d;
        let encoder_layer = 2 * layer_norm + attention + feed_forward;
        let decoder_layer = 3 * layer_norm + 2 * attention + feed_forward;
        self.vocab_size * d
            + self.n_enc_layers * encoder_layer
            + layer_norm
            + self.n_dec_layers * decoder_layer
            + layer_norm
    }
}
