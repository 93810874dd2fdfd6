//! Encoder-output cache.
//!
//! Entry names: `cls/<id>` `[d]`, `img/<id>` `[N × d]`, and `text/<attribute>`
//! `[T × d]`. Features are already at storage precision when extracted, so a
//! cache reproduces them bitwise.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::container::{ContainerKind, TensorContainer};
use crate::io::dataset::Dataset;
use crate::model::{FeatureSet, FrozenEncoders, SampleFeatures};

pub fn features_to_container(features: &FeatureSet, cfg: &ModelConfig) -> Result<TensorContainer> {
    let mut c = TensorContainer::new(ContainerKind::Embeddings);
    for (id, s) in features.ids.iter().zip(&features.samples) {
        c.insert(format!("cls/{id}"), s.cls.clone())?;
        c.insert(format!("img/{id}"), s.f_img.clone())?;
    }
    for (a, t) in cfg.attributes.iter().zip(&features.text) {
        c.insert(format!("text/{}", a.name), t.clone())?;
    }
    Ok(c)
}

/// Encodes `dataset` and writes the cache to `out`.
pub fn embed_cache(dataset: &Dataset, encoders: &FrozenEncoders, cfg: &ModelConfig, out: impl AsRef<Path>) -> Result<FeatureSet> {
    let features = encoders.extract(dataset)?;
    features_to_container(&features, cfg)?.save(out)?;
    Ok(features)
}

/// Rebuilds a feature set for `dataset` from a cache, checking every shape
/// against `cfg`.
pub fn load_cache(path: impl AsRef<Path>, dataset: &Dataset, cfg: &ModelConfig) -> Result<FeatureSet> {
    let c = TensorContainer::load(path)?;
    if c.kind() != ContainerKind::Embeddings {
        return Err(Error::CacheInvalid("not an embeddings container".into()));
    }
    let d = cfg.d_model();
    let n = cfg.encoder.num_patches();
    let fetch = |name: &str, ok: &dyn Fn(&[usize]) -> bool| {
        let t = c.get(name).ok_or_else(|| Error::CacheInvalid(format!("missing entry '{name}'")))?;
        if !ok(t.shape()) {
            return Err(Error::CacheInvalid(format!(
                "entry '{name}' has shape {:?}, incompatible with d_model {d} and {n} patches",
                t.shape()
            )));
        }
        Ok(t.clone())
    };
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        samples.push(SampleFeatures {
            cls: fetch(&format!("cls/{}", s.id), &|sh| sh == [d])?,
            f_img: fetch(&format!("img/{}", s.id), &|sh| sh == [n, d])?,
        });
    }
    let text = cfg
        .attributes
        .iter()
        .map(|a| {
            fetch(&format!("text/{}", a.name), &|sh| {
                sh.len() == 2 && sh[1] == d && (1..=cfg.encoder.max_tokens).contains(&sh[0])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = 2 * dataset.len() + cfg.num_attributes();
    if c.len() != expected {
        return Err(Error::CacheInvalid(format!("cache has {} entries, expected {expected}", c.len())));
    }
    Ok(FeatureSet {
        ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
        samples,
        text,
        labels: dataset.samples.iter().map(|s| s.labels.clone()).collect(),
    })
}
