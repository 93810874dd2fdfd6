//! Model, loss, and training configuration.
//!
//! Every struct deserializes with defaults for omitted fields and rejects
//! unknown keys, so a typo in a hyperparameter name fails loudly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub patch_size: usize,
    pub image_hw: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_hidden: 256,
            patch_size: 8,
            image_hw: 32,
            max_tokens: 16,
            vocab_size: 256,
        }
    }
}

impl EncoderConfig {
    /// Base-size dimensions: 768 wide, 12 layers, 224px images in 16px patches.
    pub fn base() -> Self {
        Self {
            d_model: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_hidden: 3072,
            patch_size: 16,
            image_hw: 224,
            max_tokens: 64,
            vocab_size: 32000,
        }
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_hw / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("patch_size", self.patch_size),
            ("image_hw", self.image_hw),
            ("max_tokens", self.max_tokens),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "encoder.d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.image_hw % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "encoder.image_hw {} not divisible by patch_size {}",
                self.image_hw, self.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub prompt: String,
    pub num_classes: usize,
}

pub fn validate_attributes(attrs: &[AttributeSpec]) -> Result<()> {
    if attrs.is_empty() {
        return Err(Error::Config("at least one attribute is required".into()));
    }
    for (i, a) in attrs.iter().enumerate() {
        if a.num_classes < 2 {
            return Err(Error::Config(format!(
                "attribute '{}' needs at least 2 classes, got {}",
                a.name, a.num_classes
            )));
        }
        if attrs[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::Config(format!("duplicate attribute name '{}'", a.name)));
        }
    }
    Ok(())
}

/// Dimensions of the full model: frozen encoders plus the trainable fusion and heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion_heads: usize,
    pub layer_norm_eps: f64,
    pub attributes: Vec<AttributeSpec>,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, fusion_heads: usize, attributes: Vec<AttributeSpec>) -> Result<Self> {
        let cfg = Self {
            encoder,
            fusion_heads,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            attributes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        validate_attributes(&self.attributes)?;
        if self.fusion_heads == 0 || self.encoder.d_model % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by fusion_heads {}",
                self.encoder.d_model, self.fusion_heads
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.encoder.d_model
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Per-head width of the fusion attention.
    pub fn head_dim(&self) -> usize {
        self.encoder.d_model / self.fusion_heads
    }
}

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ce: f64,
    pub lambda_focal: f64,
    pub focal_gamma: f64,
    pub smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_ce: 1.0,
            lambda_focal: 1.0,
            focal_gamma: 2.0,
            smoothing: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ce >= 0.0 && self.lambda_focal >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.lambda_ce + self.lambda_focal > 0.0) {
            return Err(Error::Config(
                "lambda_ce + lambda_focal must be positive".into(),
            ));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_gamma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Whether the per-attribute cross-attention fusion sits between the
/// encoders and the heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoCrossAttention,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCrossAttention => "no_cross_attention",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_cross_attention" => Ok(Ablation::NoCrossAttention),
            other => Err(Error::Config(format!("unknown ablation mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_dimensions() {
        let cfg = EncoderConfig::base();
        assert_eq!(cfg.num_patches(), 196);
        assert_eq!(cfg.patch_dim(), 768);
        let model = ModelConfig::new(
            cfg,
            8,
            vec![AttributeSpec {
                name: "hat".into(),
                prompt: "What color is the hat?".into(),
                num_classes: 2,
            }],
        )
        .unwrap();
        assert_eq!(model.head_dim(), 96);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<LossConfig>(r#"{"lambda_ce": 1.0, "gamma": 2.0}"#);
        assert!(err.is_err());
        let ok: LossConfig = serde_json::from_str(r#"{"smoothing": 0.0}"#).unwrap();
        assert_eq!(ok.lambda_focal, 1.0);
    }

    #[test]
    fn loss_config_needs_some_weight() {
        let cfg = LossConfig {
            lambda_ce: 0.0,
            lambda_focal: 0.0,
            ..LossConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn encoder_divisibility() {
        let mut cfg = EncoderConfig::default();
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::default();
        cfg.image_hw = 30;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn attribute_rules() {
        let a = |n: &str, k| AttributeSpec {
            name: n.into(),
            prompt: "p".into(),
            num_classes: k,
        };
        assert!(validate_attributes(&[a("x", 2), a("y", 3)]).is_ok());
        assert!(validate_attributes(&[a("x", 2), a("x", 3)]).is_err());
        assert!(validate_attributes(&[a("x", 1)]).is_err());
        assert!(validate_attributes(&[]).is_err());
    }
}
