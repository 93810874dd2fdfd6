//! Frozen vision and text transformer encoders.
//!
//! Weights are drawn once from [`seeded_normal`] (scale 0.02, LayerNorm
//! gains at one) and never change afterwards. Values are rounded to `f32` at
//! creation so a saved weights file reloads bit-for-bit.

mod layer;
mod text;
mod tokenizer;
mod vision;

pub use layer::{encoder_layer_forward, LayerWeights, LAYER_NORM_EPS as ENCODER_LAYER_NORM_EPS};
pub use text::{text_forward, TextWeights};
pub use tokenizer::{tokenize, Vocab, OOV_ID, OOV_TOKEN};
pub use vision::{embed_patches, patchify, unpatchify, vision_forward, VisionOutput, VisionWeights};

use sha2::{Digest, Sha256};

use crate::config::EncoderConfig;
use crate::error::Result;
use crate::io::container::{to_storage_precision, ContainerKind, TensorContainer};
use crate::rng::{seeded_normal, Prng};
use crate::tensor::Tensor;

pub const INIT_SCALE: f64 = 0.02;

/// Both encoders' parameters. Read-only once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub vision: VisionWeights,
    pub text: TextWeights,
}

/// Hands out one sub-seed per tensor, in a fixed order.
pub(crate) struct SeedStream(Prng);

impl SeedStream {
    pub(crate) fn new(seed: u64) -> Self {
        Self(Prng::new(seed))
    }

    pub(crate) fn normal(&mut self, shape: &[usize]) -> Tensor {
        to_storage_precision(&seeded_normal(shape, self.0.next_u64(), INIT_SCALE))
    }
}

impl EncoderWeights {
    pub fn seeded(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut seeds = SeedStream::new(seed);
        let vision = VisionWeights::seeded(config, &mut seeds);
        let text = TextWeights::seeded(config, &mut seeds);
        Ok(Self {
            config: config.clone(),
            vision,
            text,
        })
    }

    /// Every tensor with its container name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.vision.named_tensors();
        out.extend(self.text.named_tensors());
        out
    }

    /// SHA-256 over every tensor's name, shape and little-endian value bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new(ContainerKind::Weights);
        for (name, t) in self.named_tensors() {
            c.insert(name, t.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(config: &EncoderConfig, c: &TensorContainer) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            vision: VisionWeights::from_container(config, c)?,
            text: TextWeights::from_container(config, c)?,
        })
    }
}
