//! Two-stage vision-language fusion.
//!
//! Stage one scores each attribute prompt against the image with a cosine
//! similarity between the [CLS] embedding and the mean-pooled prompt tokens.
//! The score is reported but not consumed by stage two.
//!
//! Stage two is a dedicated multi-head cross-attention block per attribute:
//! image patches query, prompt tokens supply keys and values, and the result is
//! added back to the patch features before a LayerNorm.

use crate::attention::multi_head_attention;
use crate::error::{Error, Result};
use crate::rng::{seeded_normal, Prng};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentScore {
    pub attribute: usize,
    pub score: f64,
}

pub fn cosine_align(attribute: usize, cls_embed: &Tensor, f_text: &Tensor) -> Result<AlignmentScore> {
    let pooled = f_text.mean_rows();
    if pooled.len() != cls_embed.len() {
        return Err(Error::shape("cosine_align", cls_embed.shape(), f_text.shape()));
    }
    let a = cls_embed.data();
    let b = pooled.data();
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric(format!(
            "zero-norm embedding in cosine alignment for attribute {attribute}"
        )));
    }
    let score = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(AlignmentScore { attribute, score })
}

/// Trainable parameters of one attribute's cross-attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}

impl FusionWeights {
    /// Projections `N(0, 1/d)`, LayerNorm at identity.
    pub fn init(d_model: usize, rng: &mut Prng) -> Self {
        let scale = 1.0 / (d_model as f64).sqrt();
        let mut proj = || seeded_normal(&[d_model, d_model], rng.next_u64(), scale);
        Self {
            w_q: proj(),
            w_k: proj(),
            w_v: proj(),
            w_o: proj(),
            ln_gamma: Tensor::ones(&[d_model]),
            ln_beta: Tensor::zeros(&[d_model]),
        }
    }

    pub fn zeros_like(d_model: usize) -> Self {
        let z = Tensor::zeros(&[d_model, d_model]);
        Self {
            w_q: z.clone(),
            w_k: z.clone(),
            w_v: z.clone(),
            w_o: z,
            ln_gamma: Tensor::zeros(&[d_model]),
            ln_beta: Tensor::zeros(&[d_model]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ln_gamma", &self.ln_gamma),
            ("ln_beta", &self.ln_beta),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("ln_gamma", &mut self.ln_gamma),
            ("ln_beta", &mut self.ln_beta),
        ]
    }

    pub fn d_model(&self) -> usize {
        self.w_q.cols()
    }
}

/// Intermediate values of one cross-attention forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct CrossAttentionTrace {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Per-head attention weights `[N × T]`.
    pub weights: Vec<Tensor>,
    /// Concatenated head outputs `[N × d]`.
    pub concat: Tensor,
    /// `a_i + f_img` before normalization.
    pub residual: Tensor,
    /// Normalized residual before the gamma/beta map.
    pub normalized: Tensor,
    /// `1/sqrt(var + eps)` per row of the residual.
    pub inv_std: Vec<f64>,
    pub output: Tensor,
}

pub fn cross_attention_trace(
    f_img: &Tensor,
    f_text: &Tensor,
    w: &FusionWeights,
    num_heads: usize,
    eps: f64,
) -> Result<CrossAttentionTrace> {
    let d = w.d_model();
    if f_img.cols() != d || f_text.cols() != d {
        return Err(Error::shape("cross_attention", f_img.shape(), f_text.shape()));
    }
    let q = f_img.matmul(&w.w_q)?;
    let k = f_text.matmul(&w.w_k)?;
    let v = f_text.matmul(&w.w_v)?;
    let attn = multi_head_attention(&q, &k, &v, num_heads, false)?;
    let a = attn.concat.matmul(&w.w_o)?;
    let residual = a.add(f_img)?;
    let mut normalized = residual.clone();
    let mut inv_std = Vec::with_capacity(residual.rows());
    for r in 0..normalized.rows() {
        let row = normalized.row_mut(r);
        let (mean, is) = crate::tensor::moments(row, eps);
        row.iter_mut().for_each(|x| *x = (*x - mean) * is);
        inv_std.push(is);
    }
    let mut output = normalized.clone();
    for r in 0..output.rows() {
        for ((o, &g), &b) in output.row_mut(r).iter_mut().zip(w.ln_gamma.data()).zip(w.ln_beta.data()) {
            *o = *o * g + b;
        }
    }
    if !output.is_finite() {
        return Err(Error::Numeric("non-finite value in cross-attention output".into()));
    }
    Ok(CrossAttentionTrace {
        q,
        k,
        v,
        weights: attn.weights,
        concat: attn.concat,
        residual,
        normalized,
        inv_std,
        output,
    })
}

/// `h_i = LayerNorm(MHA(f_img W_Q, f_text W_K, f_text W_V)·W_O + f_img)`, shape of `f_img`.
pub fn cross_attention_forward(
    f_img: &Tensor,
    f_text: &Tensor,
    w: &FusionWeights,
    num_heads: usize,
    eps: f64,
) -> Result<Tensor> {
    Ok(cross_attention_trace(f_img, f_text, w, num_heads, eps)?.output)
}

/// Runs every attribute's block on the shared image features.
pub fn fuse_all(
    f_img: &Tensor,
    prompt_features: &[Tensor],
    weights: &[FusionWeights],
    num_heads: usize,
    eps: f64,
) -> Result<Vec<Tensor>> {
    if prompt_features.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} prompt feature sets for {} fusion blocks",
            prompt_features.len(),
            weights.len()
        )));
    }
    prompt_features
        .iter()
        .zip(weights)
        .map(|(t, w)| cross_attention_forward(f_img, t, w, num_heads, eps))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-5;

    fn random_weights(d: usize, seed: u64) -> FusionWeights {
        let mut w = FusionWeights::init(d, &mut Prng::new(seed));
        w.ln_gamma = seeded_normal(&[d], seed + 50, 0.3).map(|v| v + 1.0);
        w.ln_beta = seeded_normal(&[d], seed + 51, 0.3);
        w
    }

    #[test]
    fn cosine_special_cases() {
        let v = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let same = Tensor::from_rows(&[[0.0, -4.0, 1.0], [2.0, 0.0, 0.0]]).unwrap();
        assert!((cosine_align(0, &v, &same).unwrap().score - 1.0).abs() < 1e-12);
        let ortho = Tensor::from_rows(&[[2.0, 1.0, 0.0]]).unwrap();
        assert!(cosine_align(0, &v, &ortho).unwrap().score.abs() < 1e-12);
        let anti = Tensor::from_rows(&[[-1.0, 2.0, -0.5]]).unwrap();
        assert!((cosine_align(0, &v, &anti).unwrap().score + 1.0).abs() < 1e-12);
        let zero = Tensor::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        let err = cosine_align(3, &v, &zero).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("attribute 3")));
    }

    #[test]
    fn single_token_closed_form() {
        let d = 8;
        let w = random_weights(d, 1);
        let f_img = seeded_normal(&[4, d], 2, 1.0);
        let f_text = seeded_normal(&[1, d], 3, 1.0);
        let tr = cross_attention_trace(&f_img, &f_text, &w, 2, EPS).unwrap();
        let v_row = f_text.matmul(&w.w_v).unwrap().matmul(&w.w_o).unwrap();
        let a = tr.residual.sub(&f_img).unwrap();
        for r in 0..4 {
            for (x, y) in a.row(r).iter().zip(v_row.row(0)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_layer_norm_of_image() {
        let d = 8;
        let mut w = FusionWeights::zeros_like(d);
        w.ln_gamma = Tensor::ones(&[d]);
        let f_img = seeded_normal(&[4, d], 4, 1.0);
        let f_text = seeded_normal(&[3, d], 5, 1.0);
        let h = cross_attention_forward(&f_img, &f_text, &w, 2, EPS).unwrap();
        let expect = f_img.layer_norm(&Tensor::ones(&[d]), &Tensor::zeros(&[d]), EPS).unwrap();
        assert_eq!(h, expect);
    }

    // Independent step-by-step forward pass on plain vectors.
    fn oracle(f_img: &Tensor, f_text: &Tensor, w: &FusionWeights) -> Vec<Vec<f64>> {
        let d = f_img.cols();
        let proj = |x: &[f64], m: &Tensor| -> Vec<f64> {
            (0..d).map(|j| (0..d).map(|p| x[p] * m.row(p)[j]).sum()).collect()
        };
        let qs: Vec<Vec<f64>> = (0..f_img.rows()).map(|i| proj(f_img.row(i), &w.w_q)).collect();
        let ks: Vec<Vec<f64>> = (0..f_text.rows()).map(|i| proj(f_text.row(i), &w.w_k)).collect();
        let vs: Vec<Vec<f64>> = (0..f_text.rows()).map(|i| proj(f_text.row(i), &w.w_v)).collect();
        qs.iter()
            .enumerate()
            .map(|(n, q)| {
                let logits: Vec<f64> = ks
                    .iter()
                    .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let head: Vec<f64> = (0..d)
                    .map(|c| logits.iter().zip(&vs).map(|(l, v)| l.exp() / z * v[c]).sum())
                    .collect();
                let a = proj(&head, &w.w_o);
                let r: Vec<f64> = a.iter().zip(f_img.row(n)).map(|(x, y)| x + y).collect();
                let mu = r.iter().sum::<f64>() / d as f64;
                let var = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d as f64;
                r.iter()
                    .enumerate()
                    .map(|(j, x)| (x - mu) / (var + EPS).sqrt() * w.ln_gamma.data()[j] + w.ln_beta.data()[j])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn matches_step_by_step_oracle() {
        let d = 4;
        let w = random_weights(d, 7);
        let f_img = seeded_normal(&[2, d], 8, 1.0);
        let f_text = seeded_normal(&[2, d], 9, 1.0);
        let h = cross_attention_forward(&f_img, &f_text, &w, 1, EPS).unwrap();
        for (r, row) in oracle(&f_img, &f_text, &w).iter().enumerate() {
            for (c, &e) in row.iter().enumerate() {
                assert!((h.row(r)[c] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fuse_all_isolates_attributes() {
        let d = 8;
        let ws = vec![random_weights(d, 10), random_weights(d, 20), random_weights(d, 30)];
        let f_img = seeded_normal(&[4, d], 11, 1.0);
        let texts = vec![
            seeded_normal(&[3, d], 12, 1.0),
            seeded_normal(&[2, d], 13, 1.0),
            seeded_normal(&[5, d], 14, 1.0),
        ];
        let hs = fuse_all(&f_img, &texts, &ws, 2, EPS).unwrap();
        assert_eq!(hs[0], cross_attention_forward(&f_img, &texts[0], &ws[0], 2, EPS).unwrap());

        let single = fuse_all(&f_img, &texts[..1], &ws[..1], 2, EPS).unwrap();
        assert_eq!(single, vec![hs[0].clone()]);

        let swapped = fuse_all(
            &f_img,
            &[texts[1].clone(), texts[0].clone(), texts[2].clone()],
            &[ws[1].clone(), ws[0].clone(), ws[2].clone()],
            2,
            EPS,
        )
        .unwrap();
        assert_eq!(swapped[0], hs[1]);
        assert_eq!(swapped[1], hs[0]);

        let mut perturbed = ws.clone();
        perturbed[0].w_q.data_mut()[5] += 0.3;
        let again = fuse_all(&f_img, &texts, &perturbed, 2, EPS).unwrap();
        assert_ne!(again[0], hs[0]);
        assert_eq!(again[1..], hs[1..]);

        assert!(fuse_all(&f_img, &texts[..2], &ws, 2, EPS).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn output_matches_image_shape(n in 1usize..6, t in 1usize..6, seed in any::<u64>()) {
            let d = 8;
            let w = random_weights(d, seed % 1000);
            let f_img = seeded_normal(&[n, d], seed, 1.0);
            let f_text = seeded_normal(&[t, d], seed ^ 1, 1.0);
            let tr = cross_attention_trace(&f_img, &f_text, &w, 4, EPS).unwrap();
            prop_assert_eq!(tr.output.shape(), f_img.shape());
            for head in &tr.weights {
                for r in 0..n {
                    let s: f64 = head.row(r).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    prop_assert!(head.row(r).iter().all(|&p| p >= 0.0));
                }
            }
        }
    }
}
