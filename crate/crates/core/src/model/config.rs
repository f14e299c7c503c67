use serde::{Deserialize, Serialize};

use super::ops::Activation;
use crate::error::{Error, Result};
use crate::vocab::{VocabCounts, VocabLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Longest instruction, in BPE tokens, the prefix can hold.
    pub max_instruction_len: usize,
    /// Longest decoder input (BOS plus generated tokens).
    pub max_output_len: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub instruction_layers: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub vocab: VocabCounts,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            layers: 4,
            heads: 4,
            ffn_mult: 4,
            max_instruction_len: 48,
            max_output_len: 72,
            image_size: 32,
            patch_size: 4,
            instruction_layers: 2,
            dropout: 0.0,
            activation: Activation::Gelu,
            vocab: VocabCounts::default(),
        }
    }
}

impl ModelConfig {
    /// Small configuration used for quick experiments and tests.
    pub fn tiny() -> Self {
        ModelConfig { embed_dim: 64, layers: 2, heads: 4, instruction_layers: 1, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embed_dim;
        if d == 0 || self.heads == 0 || d % self.heads != 0 {
            return Err(Error::config(format!("embed_dim {d} must be a positive multiple of heads {}", self.heads)));
        }
        if self.layers == 0 || self.ffn_mult == 0 {
            return Err(Error::config("layers and ffn_mult must be positive"));
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.max_instruction_len == 0 || self.max_output_len == 0 {
            return Err(Error::config("sequence lengths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        VocabLayout::new(self.vocab)?;
        Ok(())
    }

    pub fn layout(&self) -> Result<VocabLayout> {
        VocabLayout::new(self.vocab)
    }

    pub fn image_tokens(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn max_prefix_len(&self) -> usize {
        self.image_tokens() + self.max_instruction_len
    }

    pub fn ffn_dim(&self) -> usize {
        self.embed_dim * self.ffn_mult
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn vocab_total(&self) -> usize {
        let c = self.vocab;
        c.n_special + c.n_visual + c.n_positional + c.n_text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.image_tokens(), 64);
        assert_eq!(c.patch_dim(), 48);
        assert_eq!(c.vocab_total(), 743);
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig { embed_dim: 30, heads: 4, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"embed_dim": 32, "depth": 2}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"embed_dim": 32, "heads": 2}"#).unwrap();
        assert_eq!(c.layers, 4);
    }
}
