//! On-disk dataset layout:
//!
//! ```text
//! <dir>/prompts.json        [{"name", "prompt", "num_classes"}, ...]
//! <dir>/annotations.jsonl   {"id", "image", "labels": {name: class}} per line
//! <dir>/images/<id>.vlme    VLME container with one H×W×3 tensor "image"
//! ```
//!
//! The order of `prompts.json` is the attribute order everywhere else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{validate_attributes, AttributeSpec};
use crate::error::{Error, Result};
use crate::io::container::{ContainerKind, TensorContainer};
use crate::tensor::Tensor;

pub const PROMPTS_FILE: &str = "prompts.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: String,
    pub image: String,
    pub labels: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    /// Class index per attribute, in attribute order.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub attributes: Vec<AttributeSpec>,
    pub samples: Vec<Sample>,
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<AttributeSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let attrs: Vec<AttributeSpec> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    validate_attributes(&attrs)?;
    Ok(attrs)
}

pub fn write_prompts(path: impl AsRef<Path>, attrs: &[AttributeSpec]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(attrs).expect("prompts serialize") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let c = TensorContainer::load(path.as_ref())?;
    let img = c
        .get("image")
        .ok_or_else(|| Error::Input(format!("{} has no 'image' entry", path.as_ref().display())))?;
    if img.shape().len() != 3 || img.shape()[2] != 3 {
        return Err(Error::Input(format!(
            "{}: image must be H×W×3, got {:?}",
            path.as_ref().display(),
            img.shape()
        )));
    }
    Ok(img.clone())
}

pub fn write_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let mut c = TensorContainer::new(ContainerKind::Embeddings);
    c.insert("image", image.clone())?;
    c.save(path)
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let attributes = load_prompts(dir.join(PROMPTS_FILE))?;
        let ann_path = dir.join(ANNOTATIONS_FILE);
        let text = std::fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let mut samples = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: AnnotationRecord = serde_json::from_str(line).map_err(|e| {
                Error::Input(format!("{}:{}: {e}", ann_path.display(), line_no + 1))
            })?;
            let labels = labels_in_order(&rec, &attributes)?;
            let image = read_image(dir.join(&rec.image))?;
            samples.push(Sample { id: rec.id, image, labels });
        }
        Ok(Self { attributes, samples })
    }

    /// Writes prompts, annotations and one image file per sample.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let images = dir.join(IMAGES_DIR);
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        write_prompts(dir.join(PROMPTS_FILE), &self.attributes)?;
        let mut ann = String::new();
        for s in &self.samples {
            let rel: PathBuf = [IMAGES_DIR, &format!("{}.vlme", s.id)].iter().collect();
            write_image(dir.join(&rel), &s.image)?;
            let rec = AnnotationRecord {
                id: s.id.clone(),
                image: rel.to_string_lossy().replace('\\', "/"),
                labels: self
                    .attributes
                    .iter()
                    .zip(&s.labels)
                    .map(|(a, &y)| (a.name.clone(), y))
                    .collect(),
            };
            ann.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            ann.push('\n');
        }
        let path = dir.join(ANNOTATIONS_FILE);
        std::fs::write(&path, ann).map_err(|e| Error::io(&path, e))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn labels_in_order(rec: &AnnotationRecord, attrs: &[AttributeSpec]) -> Result<Vec<usize>> {
    if let Some(extra) = rec.labels.keys().find(|k| !attrs.iter().any(|a| &a.name == *k)) {
        return Err(Error::Input(format!("sample '{}': unknown attribute '{extra}'", rec.id)));
    }
    attrs
        .iter()
        .map(|a| {
            let y = *rec
                .labels
                .get(&a.name)
                .ok_or_else(|| Error::Input(format!("sample '{}' has no label for '{}'", rec.id, a.name)))?;
            if y >= a.num_classes {
                return Err(Error::Input(format!(
                    "sample '{}': class {y} invalid for '{}' with {} classes",
                    rec.id, a.name, a.num_classes
                )));
            }
            Ok(y)
        })
        .collect()
}
