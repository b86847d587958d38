use serde::{Deserialize, Serialize};

use super::ModelError;

/// Layer/head geometry of the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// One attention/feed-forward block reused by every layer.
    #[serde(default)]
    pub share_params: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_head: 16,
            d_ff: 128,
            vocab_size: 64,
            max_seq_len: 32,
            share_params: false,
        }
    }
}

impl ModelConfig {
    /// Small geometry for tests and oracles: `d_model = n_heads * d_head`.
    pub fn tiny(n_layers: usize, n_heads: usize, d_head: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model: n_heads * d_head,
            d_head,
            d_ff: 2 * n_heads * d_head,
            vocab_size,
            max_seq_len: 16,
            share_params: false,
        }
    }

    pub fn shared(mut self, share: bool) -> Self {
        self.share_params = share;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(ModelError::Config(format!(
                "d_model ({}) must equal n_heads ({}) x d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        Ok(())
    }

    /// Number of distinct parameter blocks (1 when shared).
    pub fn n_blocks(&self) -> usize {
        if self.share_params {
            1
        } else {
            self.n_layers
        }
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// Parameter block used by `layer`.
    pub fn block_of(&self, layer: usize) -> usize {
        if self.share_params {
            0
        } else {
            layer
        }
    }

    /// True when two configs describe the same encoder layout.
    pub fn same_geometry(&self, other: &ModelConfig) -> bool {
        self.n_layers == other.n_layers
            && self.n_heads == other.n_heads
            && self.d_model == other.d_model
            && self.d_head == other.d_head
            && self.d_ff == other.d_ff
            && self.vocab_size == other.vocab_size
            && self.max_seq_len == other.max_seq_len
            && self.share_params == other.share_params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_desk_scale() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_layers, c.n_heads, c.d_model, c.d_ff, c.max_seq_len), (4, 4, 64, 128, 32));
    }

    #[test]
    fn head_width_must_divide_model_width() {
        let c = ModelConfig {
            d_head: 10,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::default()).unwrap();
        v["n_experts"] = 3.into();
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
