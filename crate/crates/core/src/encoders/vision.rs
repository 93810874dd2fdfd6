use crate::config::EncoderConfig;
use crate::encoders::{encoder_layer_forward, LayerWeights, SeedStream};
use crate::error::{Error, Result};
use crate::io::container::TensorContainer;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct VisionWeights {
    /// `[d_model × P·P·3]`, applied to a flattened patch as `W_E · vec(patch)`.
    pub patch_proj: Tensor,
    pub class_token: Tensor,
    /// `[(N + 1) × d_model]`; row 0 belongs to the class token.
    pub pos: Tensor,
    pub layers: Vec<LayerWeights>,
}

impl VisionWeights {
    pub(crate) fn seeded(cfg: &EncoderConfig, seeds: &mut SeedStream) -> Self {
        let d = cfg.d_model;
        Self {
            patch_proj: seeds.normal(&[d, cfg.patch_dim()]),
            class_token: seeds.normal(&[d]),
            pos: seeds.normal(&[cfg.num_patches() + 1, d]),
            layers: (0..cfg.num_layers).map(|_| LayerWeights::seeded(cfg, seeds)).collect(),
        }
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("vision.patch_proj".to_string(), &self.patch_proj),
            ("vision.class_token".to_string(), &self.class_token),
            ("vision.pos".to_string(), &self.pos),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named_tensors(&format!("vision.layers.{i}")));
        }
        out
    }

    pub(crate) fn from_container(cfg: &EncoderConfig, c: &TensorContainer) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            patch_proj: c.expect("vision.patch_proj", &[d, cfg.patch_dim()])?,
            class_token: c.expect("vision.class_token", &[d])?,
            pos: c.expect("vision.pos", &[cfg.num_patches() + 1, d])?,
            layers: (0..cfg.num_layers)
                .map(|i| LayerWeights::from_container(cfg, c, &format!("vision.layers.{i}")))
                .collect::<Result<_>>()?,
        })
    }
}

/// Splits an `H×W×3` image into `N = (H/P)·(W/P)` flattened patches, in
/// row-major patch order. Each patch flattens as (row, column, channel).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (h, w) = match image.shape() {
        &[h, w, 3] => (h, w),
        other => {
            return Err(Error::Input(format!("image must be H×W×3, got {other:?}")));
        }
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}×{w} not divisible into {patch}×{patch} patches"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let dim = patch * patch * 3;
    let px = image.data();
    let mut out = Vec::with_capacity(ph * pw * dim);
    for py in 0..ph {
        for pxi in 0..pw {
            for r in 0..patch {
                let start = ((py * patch + r) * w + pxi * patch) * 3;
                out.extend_from_slice(&px[start..start + patch * 3]);
            }
        }
    }
    Tensor::new(vec![ph * pw, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, patch: usize, h: usize, w: usize) -> Result<Tensor> {
    let (ph, pw) = (h / patch, w / patch);
    if patches.shape() != [ph * pw, patch * patch * 3] {
        return Err(Error::shape("unpatchify", patches.shape(), &[ph * pw, patch * patch * 3]));
    }
    let mut out = vec![0.0; h * w * 3];
    for py in 0..ph {
        for pxi in 0..pw {
            let src = patches.row(py * pw + pxi);
            for r in 0..patch {
                let start = ((py * patch + r) * w + pxi * patch) * 3;
                out[start..start + patch * 3].copy_from_slice(&src[r * patch * 3..(r + 1) * patch * 3]);
            }
        }
    }
    Tensor::new(vec![h, w, 3], out)
}

/// Class-token row followed by `W_E·vec(patch) + e_pos` for every patch.
pub fn embed_patches(patches: &Tensor, weights: &VisionWeights) -> Result<Tensor> {
    let n = patches.rows();
    if weights.pos.rows() != n + 1 {
        return Err(Error::shape("embed_patches", patches.shape(), weights.pos.shape()));
    }
    let projected = patches.matmul_t(&weights.patch_proj)?;
    let cls = weights.class_token.reshape(vec![1, weights.class_token.len()])?;
    Tensor::concat_rows(&[&cls, &projected])?.add(&weights.pos)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionOutput {
    pub cls_embed: Tensor,
    /// `[N × d_model]` patch features, the final layer without its class row.
    pub f_img: Tensor,
}

pub fn vision_forward(image: &Tensor, cfg: &EncoderConfig, weights: &VisionWeights) -> Result<VisionOutput> {
    if image.shape() != [cfg.image_hw, cfg.image_hw, 3] {
        return Err(Error::shape(
            "vision_forward image",
            image.shape(),
            &[cfg.image_hw, cfg.image_hw, 3],
        ));
    }
    let mut h = embed_patches(&patchify(image, cfg.patch_size)?, weights)?;
    for layer in &weights.layers {
        h = encoder_layer_forward(&h, layer, cfg.num_heads, false)?;
    }
    Ok(VisionOutput {
        cls_embed: Tensor::vector(h.row(0).to_vec()),
        f_img: h.slice_rows(1, h.rows())?,
    })
}
