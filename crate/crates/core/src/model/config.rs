use crate::nn::InitMode;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Module switches for the ablation variants. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Deformable + channel-align path in the cross-scale fusion; off means plain upsample + concat.
    pub use_cffm_alignment: bool,
    /// Texture transfer in the decoder; off means concat + 1×1.
    pub use_ttm: bool,
    /// Edge encoder and structure fusion in the decoder.
    pub use_structure_branch: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { use_cffm_alignment: true, use_ttm: true, use_structure_branch: true }
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation { use_cffm_alignment: true, use_ttm: true, use_structure_branch: true };
    pub const NONE: Ablation = Ablation { use_cffm_alignment: false, use_ttm: false, use_structure_branch: false };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of stage 1; stage `k` has `base_channels · 2^(k−1)`.
    pub base_channels: usize,
    pub stages: usize,
    pub residual_blocks: usize,
    pub attention_heads: usize,
    pub scale_factor: usize,
    pub ablation: Ablation,
    pub instance_norm_epsilon: f64,
    pub ttm_alternative_binding: bool,
    pub init: InitMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 32,
            stages: 4,
            residual_blocks: 2,
            attention_heads: 4,
            scale_factor: 4,
            ablation: Ablation::default(),
            instance_norm_epsilon: 1e-5,
            ttm_alternative_binding: false,
            init: InitMode::Kaiming,
        }
    }
}

impl ModelConfig {
    /// Small preset for desk-scale runs: width 8, one residual block, one head.
    pub fn tiny() -> Self {
        ModelConfig { base_channels: 8, residual_blocks: 1, attention_heads: 1, ..ModelConfig::default() }
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.stages).map(|k| self.base_channels << k).collect()
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.stages.max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(1..=4).contains(&self.stages) {
            return Err(Error::Config(format!("stages must be in 1..=4, got {}", self.stages)));
        }
        if self.attention_heads == 0 || !self.base_channels.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "attention_heads {} must divide every stage width {:?}",
                self.attention_heads,
                self.stage_channels()
            )));
        }
        if !matches!(self.scale_factor, 2 | 4) {
            return Err(Error::Config(format!("scale_factor must be 2 or 4, got {}", self.scale_factor)));
        }
        if !(self.instance_norm_epsilon > 0.0 && self.instance_norm_epsilon.is_finite()) {
            return Err(Error::Config("instance_norm_epsilon must be a positive finite number".into()));
        }
        Ok(())
    }

    /// Checks an HR-resolution spatial size against the pyramid depth.
    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::shape("encode", format!("{h}×{w} is not divisible by {m} for {} stages", self.stages)));
        }
        Ok(())
    }
}
