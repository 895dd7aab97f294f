//! Model architecture configuration.

use serde::{Deserialize, Serialize};

use crate::diffcore::Dtype;
use crate::elements::MAX_ELEMENTS;
use crate::error::{Error, Result};
use crate::geometry::SoftKnnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMode {
    /// Forces from dedicated output heads (fast, not conservative).
    Direct,
    /// Forces as -dE/dx through the full graph (energy-conserving).
    Conservative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub r_cut: f64,
    pub k: usize,
    /// Legendre angular encoding in neighborhood attention.
    pub use_lae: bool,
    /// All-to-all node attention stage.
    pub use_node_attention: bool,
    /// Radial sinc bias on node-attention logits.
    pub use_erope: bool,
    pub lae_max_degree: usize,
    pub num_frequencies: usize,
    pub edge_distance_expansion_size: usize,
    pub node_direction_expansion_size: usize,
    pub edge_direction_expansion_size: usize,
    /// Raw spherical-harmonic direction channels in the token embeddings.
    /// These break exact rotational invariance (equivariance is then learned);
    /// disable to make the energy rotation-invariant by construction.
    pub use_direction_embeddings: bool,
    pub max_num_elements: usize,
    pub ffn_hidden_multiplier: usize,
    pub output_hidden_multiplier: usize,
    pub knn: SoftKnnConfig,
    pub force_mode: ForceMode,
    pub dtype: Dtype,
}

impl ModelConfig {
    /// The "small" preset: hidden 512, 6 layers, 8 heads.
    pub fn small() -> Self {
        ModelConfig {
            hidden_size: 512,
            num_layers: 6,
            num_heads: 8,
            r_cut: 6.0,
            k: 20,
            use_lae: true,
            use_node_attention: true,
            use_erope: true,
            lae_max_degree: 3,
            num_frequencies: 32,
            edge_distance_expansion_size: 512,
            node_direction_expansion_size: 10,
            edge_direction_expansion_size: 6,
            use_direction_embeddings: true,
            max_num_elements: MAX_ELEMENTS,
            ffn_hidden_multiplier: 2,
            output_hidden_multiplier: 2,
            knn: SoftKnnConfig::default(),
            force_mode: ForceMode::Conservative,
            dtype: Dtype::F32,
        }
    }

    /// Desk-scale configuration for tests and toy training.
    pub fn toy() -> Self {
        ModelConfig {
            hidden_size: 32,
            num_layers: 2,
            num_heads: 4,
            edge_distance_expansion_size: 32,
            dtype: Dtype::F64,
            ..Self::small()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::Config("hidden_size/num_layers/num_heads must be positive".into()));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.use_lae && self.head_dim() < self.lae_max_degree + 1 {
            return Err(Error::Config(format!(
                "head dim {} too small for LAE max degree {}",
                self.head_dim(),
                self.lae_max_degree
            )));
        }
        if self.r_cut <= 0.0 || self.k == 0 {
            return Err(Error::Config("r_cut must be > 0 and k >= 1".into()));
        }
        if self.edge_distance_expansion_size < 2 {
            return Err(Error::Config("edge_distance_expansion_size must be >= 2".into()));
        }
        if self.max_num_elements == 0 || self.max_num_elements > MAX_ELEMENTS {
            return Err(Error::Config(format!("max_num_elements must be in 1..={MAX_ELEMENTS}")));
        }
        let sh_total = (self.lae_max_degree + 1) * (self.lae_max_degree + 1);
        let _ = sh_total;
        if self.use_erope && self.num_frequencies == 0 {
            return Err(Error::Config("num_frequencies must be >= 1 with ERoPE".into()));
        }
        Ok(())
    }

    /// Degrees needed for the truncated direction expansions.
    pub fn direction_expansion_degree(size: usize) -> usize {
        // Smallest L with (L+1)^2 >= size.
        let mut l = 0;
        while (l + 1) * (l + 1) < size {
            l += 1;
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_preset_matches_reference_table() {
        let c = ModelConfig::small();
        assert_eq!(c.hidden_size, 512);
        assert_eq!(c.num_layers, 6);
        assert_eq!(c.num_heads, 8);
        assert_eq!(c.node_direction_expansion_size, 10);
        assert_eq!(c.edge_direction_expansion_size, 6);
        assert_eq!(c.edge_distance_expansion_size, 512);
        assert_eq!(c.num_frequencies, 32);
        assert_eq!(c.ffn_hidden_multiplier, 2);
        assert_eq!(c.output_hidden_multiplier, 2);
        assert_eq!(c.max_num_elements, 110);
        assert!(c.knn.soft);
        assert_eq!(c.knn.sigmoid_scale, 0.2);
        assert_eq!(c.knn.lse_scale, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::toy();
        c.num_heads = 5; // 32 % 5 != 0
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.r_cut = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn expansion_degree_truncation() {
        assert_eq!(ModelConfig::direction_expansion_degree(6), 2); // 1+3+5 >= 6
        assert_eq!(ModelConfig::direction_expansion_degree(10), 3); // needs 16 >= 10
        assert_eq!(ModelConfig::direction_expansion_degree(1), 0);
        assert_eq!(ModelConfig::direction_expansion_degree(4), 1);
    }

    #[test]
    fn config_json_roundtrip() {
        let c = ModelConfig::toy();
        let s = serde_json::to_string(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.hidden_size, c.hidden_size);
        assert_eq!(back.force_mode, c.force_mode);
    }
}
