use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    FullAttention,
    LinearAttention,
}

impl BlockKind {
    pub fn short(self) -> &'static str {
        match self {
            BlockKind::FullAttention => "FA",
            BlockKind::LinearAttention => "LA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub block_layout: Vec<BlockKind>,
    #[serde(default = "default_tie")]
    pub tie_lm_head: bool,
}

fn default_tie() -> bool {
    true
}

/// MLP hidden width as a multiple of `d_model`.
pub const MLP_RATIO: usize = 4;
pub const NORM_EPS: f64 = 1e-6;

impl ModelConfig {
    /// Pure full-attention stack.
    pub fn transformer(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            vocab_size,
            max_seq_len,
            block_layout: vec![BlockKind::FullAttention; n_layers],
            tie_lm_head: true,
        }
    }

    /// Full and linear attention alternating 1:1, full attention first.
    pub fn alternating_hybrid(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize, max_seq_len: usize) -> Self {
        let block_layout = (0..n_layers)
            .map(|i| {
                if i % 2 == 0 {
                    BlockKind::FullAttention
                } else {
                    BlockKind::LinearAttention
                }
            })
            .collect();
        Self {
            block_layout,
            ..Self::transformer(n_layers, d_model, n_heads, vocab_size, max_seq_len)
        }
    }

    pub fn with_layout(mut self, layout: Vec<BlockKind>) -> Self {
        self.block_layout = layout;
        self
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * MLP_RATIO
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("n_layers, d_model and n_heads must be positive".into());
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocab_size and max_seq_len must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.block_layout.len() != self.n_layers {
            return bad(format!(
                "block_layout has {} entries for {} layers",
                self.block_layout.len(),
                self.n_layers
            ));
        }
        Ok(())
    }

    pub fn layout_string(&self) -> String {
        self.block_layout
            .iter()
            .map(|k| k.short())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_width() {
        let mut c = ModelConfig::transformer(2, 16, 3, 32, 8);
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.n_heads = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn layout_length_checked() {
        let c = ModelConfig::transformer(4, 16, 2, 32, 8).with_layout(vec![BlockKind::FullAttention; 3]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn alternating_layout_is_one_to_one() {
        let c = ModelConfig::alternating_hybrid(8, 16, 2, 32, 8);
        let full = c.block_layout.iter().filter(|k| **k == BlockKind::FullAttention).count();
        assert_eq!(full, 4);
        assert_eq!(c.layout_string(), "FA-LA-FA-LA-FA-LA-FA-LA");
    }
}
