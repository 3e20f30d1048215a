use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-view sampler scores are normalised before the prompt-axis mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerScore {
    /// Row-softmax over the view axis; weights land on the probability simplex.
    Softmax,
    /// Scaled dot products with no normalisation. Weights need not sum to 1.
    Raw,
}

/// Which prompt states query the decomposed view tokens in the sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerQuery {
    /// The learned soft prompts, shared by every view.
    SoftPrompts,
    /// Each view's own extractor output scores that view's tokens.
    ExtractorOutputs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `x + f(norm(x))` per sublayer, plus a final norm after the stack.
    Pre,
    /// `norm(x + f(x))` per sublayer.
    Post,
}

/// Shapes and switches of the multiview attribute perceiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Soft-prompt token count.
    pub prompt_tokens: usize,
    /// Model width shared by prompts, projected views and the decoder.
    pub model_dim: usize,
    /// Decomposed tokens per view, one sampler head each.
    pub sampler_heads: usize,
    /// Decoder blocks in the visual extractor.
    pub num_blocks: usize,
    /// Attention heads inside each extractor block.
    pub num_attn_heads: usize,
    /// Raw encoder embedding width before projection.
    pub encoder_dim: usize,
    pub decomposer_hidden: usize,
    pub ffn_hidden: usize,
    /// Soft cap: more views are accepted but logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_views: Option<usize>,
    pub layer_norm_eps: f64,
    pub sampler_score: SamplerScore,
    pub sampler_query: SamplerQuery,
    pub norm_placement: NormPlacement,
    /// Include the CLS token in each view's key/value set.
    pub kv_include_cls: bool,
    pub init_seed: u64,
}

impl MapConfig {
    /// Full-size profile: 32 prompt tokens of width 1024, 4 sampler heads, 6 blocks.
    pub fn full() -> Self {
        MapConfig {
            prompt_tokens: 32,
            model_dim: 1024,
            sampler_heads: 4,
            num_blocks: 6,
            num_attn_heads: 16,
            encoder_dim: 1024,
            decomposer_hidden: 2048,
            ffn_hidden: 4096,
            max_views: None,
            layer_norm_eps: 1e-5,
            sampler_score: SamplerScore::Softmax,
            sampler_query: SamplerQuery::SoftPrompts,
            norm_placement: NormPlacement::Pre,
            kv_include_cls: true,
            init_seed: 0,
        }
    }

    /// Desk-scale profile used by tests, training and experiments.
    pub fn desk() -> Self {
        MapConfig {
            prompt_tokens: 4,
            model_dim: 32,
            sampler_heads: 2,
            num_blocks: 2,
            num_attn_heads: 2,
            encoder_dim: 16,
            decomposer_hidden: 64,
            ffn_hidden: 64,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("prompt_tokens", self.prompt_tokens),
            ("model_dim", self.model_dim),
            ("sampler_heads", self.sampler_heads),
            ("num_blocks", self.num_blocks),
            ("num_attn_heads", self.num_attn_heads),
            ("encoder_dim", self.encoder_dim),
            ("decomposer_hidden", self.decomposer_hidden),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.model_dim.is_multiple_of(self.num_attn_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_attn_heads {}",
                self.model_dim, self.num_attn_heads
            )));
        }
        if self.max_views == Some(0) {
            return Err(Error::Config("max_views must be positive when set".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: MapConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        MapConfig::full().validate().unwrap();
        let desk = MapConfig::desk();
        desk.validate().unwrap();
        assert_eq!(
            (desk.prompt_tokens, desk.model_dim, desk.sampler_heads, desk.num_blocks),
            (4, 32, 2, 2)
        );
    }

    #[test]
    fn rejects_bad_head_split_and_zero_counts() {
        let mut c = MapConfig::desk();
        c.num_attn_heads = 3;
        assert!(c.validate().is_err());
        let mut c = MapConfig::desk();
        c.prompt_tokens = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = MapConfig::desk();
        c.max_views = Some(12);
        c.sampler_score = SamplerScore::Raw;
        let text = c.to_toml();
        assert!(text.contains("sampler_score = \"raw\""));
        assert_eq!(MapConfig::from_toml(&text).unwrap(), c);
        assert_eq!(
            MapConfig::from_toml(&MapConfig::desk().to_toml()).unwrap(),
            MapConfig::desk()
        );
    }
}
