use crate::attention::multi_head_attention;
use crate::config::EncoderConfig;
use crate::encoders::SeedStream;
use crate::error::Result;
use crate::io::container::TensorContainer;
use crate::tensor::Tensor;

/// One post-LN transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_mlp_in: Tensor,
    pub w_mlp_out: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl LayerWeights {
    pub(crate) fn seeded(cfg: &EncoderConfig, seeds: &mut SeedStream) -> Self {
        let (d, m) = (cfg.d_model, cfg.mlp_hidden);
        Self {
            w_q: seeds.normal(&[d, d]),
            w_k: seeds.normal(&[d, d]),
            w_v: seeds.normal(&[d, d]),
            w_o: seeds.normal(&[d, d]),
            ln1_gamma: Tensor::ones(&[d]),
            ln1_beta: Tensor::zeros(&[d]),
            w_mlp_in: seeds.normal(&[d, m]),
            w_mlp_out: seeds.normal(&[m, d]),
            ln2_gamma: Tensor::ones(&[d]),
            ln2_beta: Tensor::zeros(&[d]),
        }
    }

    pub(crate) fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("w_mlp_in", &self.w_mlp_in),
            ("w_mlp_out", &self.w_mlp_out),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
    }

    pub(crate) fn from_container(cfg: &EncoderConfig, c: &TensorContainer, prefix: &str) -> Result<Self> {
        let (d, m) = (cfg.d_model, cfg.mlp_hidden);
        let get = |n: &str, shape: &[usize]| c.expect(&format!("{prefix}.{n}"), shape);
        Ok(Self {
            w_q: get("w_q", &[d, d])?,
            w_k: get("w_k", &[d, d])?,
            w_v: get("w_v", &[d, d])?,
            w_o: get("w_o", &[d, d])?,
            ln1_gamma: get("ln1_gamma", &[d])?,
            ln1_beta: get("ln1_beta", &[d])?,
            w_mlp_in: get("w_mlp_in", &[d, m])?,
            w_mlp_out: get("w_mlp_out", &[m, d])?,
            ln2_gamma: get("ln2_gamma", &[d])?,
            ln2_beta: get("ln2_beta", &[d])?,
        })
    }
}

/// `h' = LN(MSA(h) + h)`, `out = LN(MLP(h') + h')` with `MLP(x) = GELU(x·W_in)·W_out`.
///
/// Every step is row-local except attention, and causal attention reads only
/// earlier rows, so with `causal` row `t` of the output depends only on rows
/// `0..=t` of the input.
pub fn encoder_layer_forward(h: &Tensor, w: &LayerWeights, num_heads: usize, causal: bool) -> Result<Tensor> {
    let q = h.matmul(&w.w_q)?;
    let k = h.matmul(&w.w_k)?;
    let v = h.matmul(&w.w_v)?;
    let attn = multi_head_attention(&q, &k, &v, num_heads, causal)?;
    let msa = attn.concat.matmul(&w.w_o)?;
    let h1 = msa.add(h)?.layer_norm(&w.ln1_gamma, &w.ln1_beta, LAYER_NORM_EPS)?;
    let mlp = h1.matmul(&w.w_mlp_in)?.gelu().matmul(&w.w_mlp_out)?;
    mlp.add(&h1)?.layer_norm(&w.ln2_gamma, &w.ln2_beta, LAYER_NORM_EPS)
}
