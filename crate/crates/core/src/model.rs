//! The assembled model: frozen encoders feeding per-attribute fusion blocks
//! and classification heads.

use rayon::prelude::*;

use crate::config::{Ablation, AttributeSpec, ModelConfig};
use crate::encoders::{text_forward, tokenize, vision_forward, EncoderWeights, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{cosine_align, cross_attention_forward, AlignmentScore, FusionWeights};
use crate::heads::{head_forward, pool, predict, Prediction, HeadWeights};
use crate::io::container::{to_storage_precision, ContainerKind, TensorContainer};
use crate::io::dataset::Dataset;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Everything the optimizer may touch. Encoder weights are deliberately not here.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableParams {
    pub fusion: Vec<FusionWeights>,
    pub heads: Vec<HeadWeights>,
}

impl TrainableParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Prng::new(seed);
        let d = cfg.d_model();
        let fusion = cfg.attributes.iter().map(|_| FusionWeights::init(d, &mut rng)).collect();
        let heads = cfg
            .attributes
            .iter()
            .map(|a| HeadWeights::init(d, a.num_classes, &mut rng))
            .collect();
        Self { fusion, heads }
    }

    pub fn zeros_like(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model();
        Self {
            fusion: cfg.attributes.iter().map(|_| FusionWeights::zeros_like(d)).collect(),
            heads: cfg
                .attributes
                .iter()
                .map(|a| HeadWeights::zeros_like(d, a.num_classes))
                .collect(),
        }
    }

    /// Named tensors in the canonical order: all fusion blocks, then all heads.
    pub fn named_tensors(&self, with_fusion: bool) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if with_fusion {
            for (i, f) in self.fusion.iter().enumerate() {
                out.extend(f.tensors().into_iter().map(|(n, t)| (format!("fusion.{i}.{n}"), t)));
            }
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head.{i}.w"), &h.w));
            out.push((format!("head.{i}.b"), &h.b));
        }
        out
    }

    pub fn tensors_mut(&mut self, with_fusion: bool) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if with_fusion {
            for f in &mut self.fusion {
                out.extend(f.tensors_mut().into_iter().map(|(_, t)| t));
            }
        }
        for h in &mut self.heads {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    /// Weights container; the ablated variant carries no fusion entries.
    pub fn to_container(&self, ablation: Ablation) -> Result<TensorContainer> {
        let mut c = TensorContainer::new(ContainerKind::Weights);
        for (name, t) in self.named_tensors(ablation == Ablation::Full) {
            c.insert(name, t.clone())?;
        }
        Ok(c)
    }

    /// Loads heads and, when present, fusion blocks. A container without any
    /// fusion entries is an ablated model.
    pub fn from_container(cfg: &ModelConfig, c: &TensorContainer) -> Result<(Self, Ablation)> {
        let d = cfg.d_model();
        let has_fusion = c.names().any(|n| n.starts_with("fusion."));
        let mut params = Self::zeros_like(cfg);
        if has_fusion {
            for (i, f) in params.fusion.iter_mut().enumerate() {
                for (name, t) in f.tensors_mut() {
                    let shape = t.shape().to_vec();
                    *t = c.expect(&format!("fusion.{i}.{name}"), &shape)?;
                }
            }
        }
        for (i, (h, a)) in params.heads.iter_mut().zip(&cfg.attributes).enumerate() {
            h.w = c.expect(&format!("head.{i}.w"), &[d, a.num_classes])?;
            h.b = c.expect(&format!("head.{i}.b"), &[a.num_classes])?;
        }
        let expected = params.named_tensors(has_fusion).len();
        if c.len() != expected {
            return Err(Error::Input(format!(
                "weights container has {} entries, expected {expected}",
                c.len()
            )));
        }
        let ablation = if has_fusion { Ablation::Full } else { Ablation::NoCrossAttention };
        Ok((params, ablation))
    }
}

/// Encoder outputs for one image, rounded to storage precision.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFeatures {
    pub cls: Tensor,
    pub f_img: Tensor,
}

/// Encoder outputs for a whole labelled dataset. Prompt features are shared
/// across samples, one `[T_i × d]` matrix per attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub samples: Vec<SampleFeatures>,
    pub text: Vec<Tensor>,
    pub labels: Vec<Vec<usize>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset by sample index, in the given order.
    pub fn select(&self, idx: &[usize]) -> FeatureSet {
        FeatureSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            text: self.text.clone(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// Frozen encoders plus the vocabulary used to tokenize prompts.
#[derive(Clone, Debug)]
pub struct FrozenEncoders {
    pub weights: EncoderWeights,
    pub vocab: Vocab,
}

impl FrozenEncoders {
    pub fn new(weights: EncoderWeights, vocab: Vocab) -> Result<Self> {
        if vocab.len() > weights.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the encoder table holds {}",
                vocab.len(),
                weights.config.vocab_size
            )));
        }
        Ok(Self { weights, vocab })
    }

    pub fn encode_image(&self, image: &Tensor) -> Result<SampleFeatures> {
        let out = vision_forward(image, &self.weights.config, &self.weights.vision)?;
        Ok(SampleFeatures {
            cls: to_storage_precision(&out.cls_embed),
            f_img: to_storage_precision(&out.f_img),
        })
    }

    pub fn encode_prompt(&self, prompt: &str) -> Result<Tensor> {
        let ids = tokenize(prompt, &self.vocab, self.weights.config.max_tokens)?;
        Ok(to_storage_precision(&text_forward(&ids, &self.weights.config, &self.weights.text)?))
    }

    pub fn encode_prompts(&self, attrs: &[AttributeSpec]) -> Result<Vec<Tensor>> {
        attrs.iter().map(|a| self.encode_prompt(&a.prompt)).collect()
    }

    /// Runs both encoders over a dataset. Samples are independent, so the
    /// parallel map gives the same bits as a serial loop.
    pub fn extract(&self, dataset: &Dataset) -> Result<FeatureSet> {
        let samples = dataset
            .samples
            .par_iter()
            .map(|s| self.encode_image(&s.image))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
            samples,
            text: self.encode_prompts(&dataset.attributes)?,
            labels: dataset.samples.iter().map(|s| s.labels.clone()).collect(),
        })
    }
}

/// Per-attribute class probabilities for one sample.
pub fn attribute_probabilities(
    params: &TrainableParams,
    cfg: &ModelConfig,
    sample: &SampleFeatures,
    text: &[Tensor],
    ablation: Ablation,
) -> Result<Vec<Tensor>> {
    if text.len() != cfg.num_attributes() || params.heads.len() != cfg.num_attributes() {
        return Err(Error::Config(format!(
            "{} prompts / {} heads for {} attributes",
            text.len(),
            params.heads.len(),
            cfg.num_attributes()
        )));
    }
    let image_pool = pool(&sample.f_img);
    (0..cfg.num_attributes())
        .map(|i| {
            let pooled = match ablation {
                Ablation::Full => pool(&cross_attention_forward(
                    &sample.f_img,
                    &text[i],
                    &params.fusion[i],
                    cfg.fusion_heads,
                    cfg.layer_norm_eps,
                )?),
                Ablation::NoCrossAttention => image_pool.clone(),
            };
            Ok(head_forward(&pooled, &params.heads[i])?.1)
        })
        .collect()
}

/// Predictions for every sample and attribute.
pub fn predict_all(
    params: &TrainableParams,
    cfg: &ModelConfig,
    data: &FeatureSet,
    ablation: Ablation,
) -> Result<Vec<Vec<Prediction>>> {
    data.samples
        .par_iter()
        .map(|s| {
            Ok(attribute_probabilities(params, cfg, s, &data.text, ablation)?
                .iter()
                .map(predict)
                .collect())
        })
        .collect()
}

/// Zero-shot alignment scores, `[sample][attribute]`.
pub fn zero_shot_scores(data: &FeatureSet) -> Result<Vec<Vec<AlignmentScore>>> {
    data.samples
        .iter()
        .map(|s| {
            data.text
                .iter()
                .enumerate()
                .map(|(i, t)| cosine_align(i, &s.cls, t))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderConfig;

    fn cfg() -> ModelConfig {
        ModelConfig::new(
            EncoderConfig {
                d_model: 8,
                num_layers: 1,
                num_heads: 2,
                mlp_hidden: 16,
                patch_size: 4,
                image_hw: 8,
                max_tokens: 6,
                vocab_size: 40,
            },
            2,
            vec![
                AttributeSpec { name: "a".into(), prompt: "is the hat red ?".into(), num_classes: 2 },
                AttributeSpec { name: "b".into(), prompt: "what color".into(), num_classes: 3 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn container_round_trip_and_ablation_detection() {
        let c = cfg();
        let p = TrainableParams::init(&c, 5).named_tensors(true).iter().map(|(n, t)| (n.clone(), to_storage_precision(t))).collect::<Vec<_>>();
        let mut container = TensorContainer::new(ContainerKind::Weights);
        for (n, t) in &p {
            container.insert(n.clone(), t.clone()).unwrap();
        }
        let (back, mode) = TrainableParams::from_container(&c, &container).unwrap();
        assert_eq!(mode, Ablation::Full);
        assert_eq!(back.named_tensors(true).len(), p.len());

        let ablated = back.to_container(Ablation::NoCrossAttention).unwrap();
        assert!(ablated.names().all(|n| n.starts_with("head.")));
        let (_, mode) = TrainableParams::from_container(&c, &ablated).unwrap();
        assert_eq!(mode, Ablation::NoCrossAttention);
    }

    #[test]
    fn incompatible_container_rejected() {
        let c = cfg();
        let mut other = c.clone();
        other.attributes[1].num_classes = 4;
        let container = TrainableParams::init(&other, 1).to_container(Ablation::Full).unwrap();
        assert!(TrainableParams::from_container(&c, &container).is_err());
    }

    #[test]
    fn ablated_probabilities_ignore_fusion() {
        let c = cfg();
        let enc = EncoderWeights::seeded(&c.encoder, 3).unwrap();
        let frozen = FrozenEncoders::new(enc, Vocab::from_texts(&["is the hat red ?", "what color"])).unwrap();
        let img = crate::rng::seeded_normal(&[8, 8, 3], 2, 0.3);
        let s = frozen.encode_image(&img).unwrap();
        let text = frozen.encode_prompts(&c.attributes).unwrap();
        let p = TrainableParams::init(&c, 1);
        let mut q = p.clone();
        q.fusion[0].w_v = q.fusion[0].w_v.scale(3.0);
        let a = attribute_probabilities(&p, &c, &s, &text, Ablation::NoCrossAttention).unwrap();
        let b = attribute_probabilities(&q, &c, &s, &text, Ablation::NoCrossAttention).unwrap();
        assert_eq!(a, b);
        let full = attribute_probabilities(&q, &c, &s, &text, Ablation::Full).unwrap();
        assert_eq!(full[0].len(), 2);
        assert_eq!(full[1].len(), 3);
    }
}
