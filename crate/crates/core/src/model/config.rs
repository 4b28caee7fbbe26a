//! Model hyperparameters and the derived parameter shape table.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters for the three-component model: patch-based
/// vision encoder, perceptron projector, causal text decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Pixels per image side (square inputs).
    pub image_size: usize,
    /// Pixels per square patch; must divide `image_size`.
    pub patch_size: usize,
    /// Vision encoder channel width.
    pub vision_dim: usize,
    /// Vision encoder transformer blocks.
    pub vision_layers: usize,
    /// Decoder channel width; must be divisible by `heads`.
    pub decoder_dim: usize,
    /// Decoder transformer blocks.
    pub decoder_layers: usize,
    /// Attention heads for both towers.
    pub heads: usize,
    /// Token vocabulary size including special tokens.
    pub vocab_size: usize,
    /// Maximum sequence length (prompt + image tokens + response).
    pub max_seq_len: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            vision_dim: 64,
            vision_layers: 2,
            decoder_dim: 128,
            decoder_layers: 4,
            heads: 4,
            vocab_size: 512,
            max_seq_len: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Patches per image side.
    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Visual tokens produced per image.
    pub fn patch_count(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    /// Flattened patch feature size (RGB).
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::Config("image_size and patch_size must be positive".into()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.decoder_dim % self.heads != 0 || self.vision_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "decoder_dim {} and vision_dim {} must be divisible by heads {}",
                self.decoder_dim, self.vision_dim, self.heads
            )));
        }
        if self.vocab_size < super::tokenizer::SPECIAL_TOKEN_COUNT + 2 {
            return Err(Error::Config(format!(
                "vocab_size {} too small to reserve the special tokens",
                self.vocab_size
            )));
        }
        if self.max_seq_len < self.patch_count() + 2 {
            return Err(Error::Config(format!(
                "max_seq_len {} cannot hold {} image tokens",
                self.max_seq_len,
                self.patch_count()
            )));
        }
        if self.vision_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("need at least one layer per tower".into()));
        }
        Ok(())
    }

    /// Named parameter shapes in fixed declaration order. Shapes are derived
    /// from the config alone; no data has to flow to know them.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let vd = self.vision_dim;
        let dd = self.decoder_dim;
        let mut out: Vec<(String, usize, usize)> = Vec::new();
        let mut push = |name: String, r: usize, c: usize| out.push((name, r, c));

        push("vision.patch_embed.w".into(), self.patch_dim(), vd);
        push("vision.patch_embed.b".into(), 1, vd);
        push("vision.pos".into(), self.patch_count(), vd);
        for i in 0..self.vision_layers {
            block_shapes(&mut push, &format!("vision.l{i}"), vd);
        }
        push("vision.ln_out.g".into(), 1, vd);
        push("vision.ln_out.b".into(), 1, vd);

        push("proj.w1".into(), vd, dd);
        push("proj.b1".into(), 1, dd);
        push("proj.w2".into(), dd, dd);
        push("proj.b2".into(), 1, dd);

        push("dec.tok_emb".into(), self.vocab_size, dd);
        push("dec.pos".into(), self.max_seq_len, dd);
        for i in 0..self.decoder_layers {
            block_shapes(&mut push, &format!("dec.l{i}"), dd);
        }
        push("dec.ln_out.g".into(), 1, dd);
        push("dec.ln_out.b".into(), 1, dd);
        push("dec.head.w".into(), dd, self.vocab_size);
        push("dec.head.b".into(), 1, self.vocab_size);
        out
    }

    /// Total scalar parameter count, from shapes alone.
    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

fn block_shapes(push: &mut impl FnMut(String, usize, usize), prefix: &str, dim: usize) {
    let hidden = 4 * dim;
    push(format!("{prefix}.ln1.g"), 1, dim);
    push(format!("{prefix}.ln1.b"), 1, dim);
    for w in ["wq", "wk", "wv", "wo"] {
        push(format!("{prefix}.attn.{w}"), dim, dim);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        push(format!("{prefix}.attn.{b}"), 1, dim);
    }
    push(format!("{prefix}.ln2.g"), 1, dim);
    push(format!("{prefix}.ln2.b"), 1, dim);
    push(format!("{prefix}.mlp.w1"), dim, hidden);
    push(format!("{prefix}.mlp.b1"), 1, hidden);
    push(format!("{prefix}.mlp.w2"), hidden, dim);
    push(format!("{prefix}.mlp.b2"), 1, dim);
}

/// A deliberately tiny configuration for gradient checking; parameter count
/// stays under 1k so finite differences finish in seconds.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        image_size: 4,
        patch_size: 4,
        vision_dim: 4,
        vision_layers: 1,
        decoder_dim: 4,
        decoder_layers: 1,
        heads: 2,
        vocab_size: 12,
        max_seq_len: 12,
        seed: 7,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.patch_count(), 16);
        assert_eq!(cfg.patch_dim(), 192);
    }

    #[test]
    fn divisibility_enforced() {
        let cfg = ModelConfig {
            patch_size: 7,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn micro_config_under_1k_params() {
        let cfg = micro_config();
        cfg.validate().unwrap();
        assert!(cfg.param_count() <= 1000, "micro config has {}", cfg.param_count());
    }

    #[test]
    fn shape_closure_needs_no_data() {
        let cfg = ModelConfig::default();
        let shapes = cfg.param_shapes();
        assert!(shapes.iter().any(|(n, r, c)| n == "dec.tok_emb" && *r == 512 && *c == 128));
        assert!(shapes.iter().any(|(n, r, c)| n == "vision.pos" && *r == 16 && *c == 64));
    }
}
