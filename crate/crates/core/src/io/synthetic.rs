//! Seeded synthetic attribute datasets.
//!
//! Each attribute owns a patch-aligned rectangle of the image. The region is
//! filled with a flat intensity plus noise; the label is then read back from
//! the region's mean intensity against the attribute's thresholds, so labels
//! are always recoverable from the pixels by [`label_from_image`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AttributeSpec;
use crate::error::{Error, Result};
use crate::io::dataset::{Dataset, Sample};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    fn overlaps(&self, o: &Region) -> bool {
        self.left < o.left + o.width
            && o.left < self.left + self.width
            && self.top < o.top + o.height
            && o.top < self.top + self.height
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAttribute {
    pub name: String,
    pub prompt: String,
    pub num_classes: usize,
    pub region: Region,
    /// `num_classes − 1` increasing cut points on the region mean.
    pub thresholds: Vec<f64>,
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub image_hw: usize,
    pub patch_size: usize,
    pub seed: u64,
    /// Half-width of the uniform pixel noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub attributes: Vec<SyntheticAttribute>,
}

/// Mid-grey level of pixels outside every region.
const BACKGROUND: f64 = 0.5;
/// Fraction of each class band kept clear at either edge when drawing a level.
const BAND_MARGIN: f64 = 0.2;

impl SyntheticSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
    }

    pub fn attribute_specs(&self) -> Vec<AttributeSpec> {
        self.attributes
            .iter()
            .map(|a| AttributeSpec {
                name: a.name.clone(),
                prompt: a.prompt.clone(),
                num_classes: a.num_classes,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_hw == 0 || self.image_hw % p != 0 {
            return Err(Error::Spec(format!(
                "image_hw {} must be a positive multiple of patch_size {p}",
                self.image_hw
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Spec("noise must be non-negative".into()));
        }
        crate::config::validate_attributes(&self.attribute_specs()).map_err(|e| Error::Spec(e.to_string()))?;
        for (i, a) in self.attributes.iter().enumerate() {
            let r = a.region;
            if r.height == 0 || r.width == 0 {
                return Err(Error::Spec(format!("region of '{}' is empty", a.name)));
            }
            if [r.top, r.left, r.height, r.width].iter().any(|v| v % p != 0) {
                return Err(Error::Spec(format!("region of '{}' is not aligned to {p}-pixel patches", a.name)));
            }
            if r.top + r.height > self.image_hw || r.left + r.width > self.image_hw {
                return Err(Error::Spec(format!("region of '{}' is out of bounds", a.name)));
            }
            if let Some(o) = self.attributes[..i].iter().find(|o| o.region.overlaps(&r)) {
                return Err(Error::Spec(format!("region overlap between '{}' and '{}'", o.name, a.name)));
            }
            if a.thresholds.len() != a.num_classes - 1 {
                return Err(Error::Spec(format!(
                    "'{}' needs {} thresholds, got {}",
                    a.name,
                    a.num_classes - 1,
                    a.thresholds.len()
                )));
            }
            if a.thresholds.windows(2).any(|w| !(w[0] < w[1])) || a.thresholds.iter().any(|t| !t.is_finite()) {
                return Err(Error::Spec(format!("thresholds of '{}' must be finite and increasing", a.name)));
            }
        }
        Ok(())
    }
}

/// Mean over every pixel and channel of `region`.
pub fn region_mean(image: &Tensor, region: &Region) -> f64 {
    let w = image.shape()[1];
    let mut sum = 0.0;
    for y in region.top..region.top + region.height {
        let start = (y * w + region.left) * 3;
        sum += image.data()[start..start + region.width * 3].iter().sum::<f64>();
    }
    sum / (region.height * region.width * 3) as f64
}

/// The generating rule: the class is the number of thresholds the region mean exceeds.
pub fn label_from_image(image: &Tensor, attr: &SyntheticAttribute) -> usize {
    let m = region_mean(image, &attr.region);
    attr.thresholds.iter().filter(|&&t| m > t).count()
}

fn class_band(attr: &SyntheticAttribute, class: usize) -> Option<(f64, f64)> {
    let lo = if class == 0 { 0.0 } else { attr.thresholds[class - 1].clamp(0.0, 1.0) };
    let hi = if class + 1 == attr.num_classes { 1.0 } else { attr.thresholds[class].clamp(0.0, 1.0) };
    (hi > lo).then(|| {
        let m = (hi - lo) * BAND_MARGIN;
        (lo + m, hi - m)
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let hw = spec.image_hw;
    let mut rng = Prng::new(spec.seed);
    let width = spec.num_samples.max(1).to_string().len().max(6);
    let mut samples = Vec::with_capacity(spec.num_samples);
    for n in 0..spec.num_samples {
        let mut px: Vec<f64> = (0..hw * hw * 3)
            .map(|_| BACKGROUND + spec.noise * rng.uniform(-1.0, 1.0))
            .collect();
        for a in &spec.attributes {
            let class = rng.below(a.num_classes);
            let level = match class_band(a, class) {
                Some((lo, hi)) => rng.uniform(lo, hi),
                None => rng.next_f64(),
            };
            let r = a.region;
            for y in r.top..r.top + r.height {
                for x in r.left..r.left + r.width {
                    for c in 0..3 {
                        px[(y * hw + x) * 3 + c] = (level + spec.noise * rng.uniform(-1.0, 1.0)).clamp(0.0, 1.0);
                    }
                }
            }
        }
        // Stored images are f32; label from exactly what will be stored.
        let image = Tensor::new(vec![hw, hw, 3], px)?.map(|v| v as f32 as f64);
        let labels = spec.attributes.iter().map(|a| label_from_image(&image, a)).collect();
        samples.push(Sample {
            id: format!("{n:0width$}"),
            image,
            labels,
        });
    }
    Ok(Dataset {
        attributes: spec.attribute_specs(),
        samples,
    })
}

/// Generates and writes the dataset directory.
pub fn generate_to_dir(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<Dataset> {
    let ds = generate_synthetic(spec)?;
    ds.save(out)?;
    Ok(ds)
}

/// Two binary attributes on the top and bottom halves of the image.
pub fn two_region_spec(num_samples: usize, image_hw: usize, patch_size: usize, seed: u64) -> SyntheticSpec {
    let half = (image_hw / patch_size / 2) * patch_size;
    SyntheticSpec {
        num_samples,
        image_hw,
        patch_size,
        seed,
        noise: default_noise(),
        attributes: vec![
            SyntheticAttribute {
                name: "hat".into(),
                prompt: "Is the person wearing a hat?".into(),
                num_classes: 2,
                region: Region { top: 0, left: 0, height: half, width: image_hw },
                thresholds: vec![0.5],
            },
            SyntheticAttribute {
                name: "shoes".into(),
                prompt: "What color are the shoes?".into(),
                num_classes: 2,
                region: Region { top: half, left: 0, height: image_hw - half, width: image_hw },
                thresholds: vec![0.5],
            },
        ],
    }
}
