use crate::config::EncoderConfig;
use crate::encoders::{encoder_layer_forward, LayerWeights, SeedStream};
use crate::error::{Error, Result};
use crate::io::container::TensorContainer;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TextWeights {
    /// `[V × d_model]`.
    pub token_table: Tensor,
    /// `[T_max × d_model]`.
    pub pos: Tensor,
    pub layers: Vec<LayerWeights>,
}

impl TextWeights {
    pub(crate) fn seeded(cfg: &EncoderConfig, seeds: &mut SeedStream) -> Self {
        let d = cfg.d_model;
        Self {
            token_table: seeds.normal(&[cfg.vocab_size, d]),
            pos: seeds.normal(&[cfg.max_tokens, d]),
            layers: (0..cfg.num_layers).map(|_| LayerWeights::seeded(cfg, seeds)).collect(),
        }
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("text.token_table".to_string(), &self.token_table),
            ("text.pos".to_string(), &self.pos),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named_tensors(&format!("text.layers.{i}")));
        }
        out
    }

    pub(crate) fn from_container(cfg: &EncoderConfig, c: &TensorContainer) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            token_table: c.expect("text.token_table", &[cfg.vocab_size, d])?,
            pos: c.expect("text.pos", &[cfg.max_tokens, d])?,
            layers: (0..cfg.num_layers)
                .map(|i| LayerWeights::from_container(cfg, c, &format!("text.layers.{i}")))
                .collect::<Result<_>>()?,
        })
    }
}

/// Token-level features `[T × d_model]`: token plus position embeddings, then
/// the causal layers. Every position is kept.
pub fn text_forward(ids: &[usize], cfg: &EncoderConfig, weights: &TextWeights) -> Result<Tensor> {
    if ids.is_empty() || ids.len() > cfg.max_tokens {
        return Err(Error::Input(format!(
            "token sequence length {} outside 1..={}",
            ids.len(),
            cfg.max_tokens
        )));
    }
    let d = cfg.d_model;
    let mut data = Vec::with_capacity(ids.len() * d);
    for (t, &id) in ids.iter().enumerate() {
        if id >= cfg.vocab_size {
            return Err(Error::Input(format!(
                "token id {id} at position {t} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        data.extend(
            weights
                .token_table
                .row(id)
                .iter()
                .zip(weights.pos.row(t))
                .map(|(e, p)| e + p),
        );
    }
    let mut h = Tensor::new(vec![ids.len(), d], data)?;
    for layer in &weights.layers {
        h = encoder_layer_forward(&h, layer, cfg.num_heads, true)?;
    }
    Ok(h)
}
