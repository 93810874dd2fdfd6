//! Reverse-mode gradients of the batch loss with respect to the fusion blocks
//! and heads. Encoder outputs enter as constants.

use rayon::prelude::*;

use crate::attention::attention_scale;
use crate::config::{Ablation, LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::{cross_attention_trace, FusionWeights};
use crate::heads::{attribute_loss, attribute_loss_grad, head_forward, pool, HeadWeights};
use crate::model::{FeatureSet, SampleFeatures, TrainableParams};
use crate::tensor::Tensor;

/// One gradient per trainable tensor. There is no slot for encoder weights;
/// `fusion` is `None` when the fusion blocks are bypassed.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub fusion: Option<Vec<FusionWeights>>,
    pub heads: Vec<HeadWeights>,
}

impl GradientSet {
    pub fn zeros(cfg: &ModelConfig, ablation: Ablation) -> Self {
        let z = TrainableParams::zeros_like(cfg);
        Self {
            fusion: (ablation == Ablation::Full).then_some(z.fusion),
            heads: z.heads,
        }
    }

    /// Gradients in the same order as [`TrainableParams::named_tensors`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(fusion) = &self.fusion {
            for (i, f) in fusion.iter().enumerate() {
                out.extend(f.tensors().into_iter().map(|(n, t)| (format!("fusion.{i}.{n}"), t)));
            }
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head.{i}.w"), &h.w));
            out.push((format!("head.{i}.b"), &h.b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(fusion) = &mut self.fusion {
            for f in fusion {
                out.extend(f.tensors_mut().into_iter().map(|(_, t)| t));
            }
        }
        for h in &mut self.heads {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    fn accumulate(&mut self, other: &GradientSet) -> Result<()> {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.named_tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Mean loss over the batch (each sample itself the mean over attributes)
/// and its exact gradient.
///
/// Per-sample work runs in parallel, but the partial gradients are summed in
/// batch order, so the result does not depend on the thread count.
pub fn forward_backward(
    params: &TrainableParams,
    data: &FeatureSet,
    batch: &[usize],
    cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    ablation: Ablation,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let parts: Vec<Result<(f64, GradientSet)>> = batch
        .par_iter()
        .map(|&i| {
            sample_forward_backward(params, cfg, loss_cfg, ablation, &data.samples[i], &data.text, &data.labels[i])
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("sample '{}': {m}", data.ids[i])),
                    other => other,
                })
        })
        .collect();
    let mut total = GradientSet::zeros(cfg, ablation);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.accumulate(&g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Loss of one sample, averaged over attributes, with its gradient.
pub fn sample_forward_backward(
    params: &TrainableParams,
    cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    ablation: Ablation,
    sample: &SampleFeatures,
    text: &[Tensor],
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    let a = cfg.num_attributes();
    if labels.len() != a || text.len() != a {
        return Err(Error::Input(format!(
            "{} labels / {} prompts for {a} attributes",
            labels.len(),
            text.len()
        )));
    }
    let weight = 1.0 / a as f64;
    let mut grads = GradientSet::zeros(cfg, ablation);
    let mut loss = 0.0;
    let image_pool = pool(&sample.f_img);
    for i in 0..a {
        let spec = &cfg.attributes[i];
        if labels[i] >= spec.num_classes {
            return Err(Error::Input(format!(
                "label {} out of range for attribute '{}' with {} classes",
                labels[i], spec.name, spec.num_classes
            )));
        }
        let trace = match ablation {
            Ablation::Full => Some(cross_attention_trace(
                &sample.f_img,
                &text[i],
                &params.fusion[i],
                cfg.fusion_heads,
                cfg.layer_norm_eps,
            )?),
            Ablation::NoCrossAttention => None,
        };
        let pooled = match &trace {
            Some(tr) => pool(&tr.output),
            None => image_pool.clone(),
        };
        let head = &params.heads[i];
        let (_, p) = head_forward(&pooled, head)?;
        let l = attribute_loss(&p, labels[i], loss_cfg)
            .map_err(|_| Error::Numeric(format!("non-finite loss for attribute '{}'", spec.name)))?;
        loss += weight * l;

        let dz = attribute_loss_grad(&p, labels[i], loss_cfg).scale(weight);
        let k = dz.len();
        let hg = &mut grads.heads[i];
        let mut dpooled = vec![0.0; pooled.len()];
        for (r, (&x, dp)) in pooled.data().iter().zip(dpooled.iter_mut()).enumerate() {
            let w_row = head.w.row(r);
            let g_row = hg.w.row_mut(r);
            for c in 0..k {
                g_row[c] += x * dz.data()[c];
                *dp += w_row[c] * dz.data()[c];
            }
        }
        hg.b.add_assign(&dz)?;

        if let (Some(tr), Some(fusion_grads)) = (trace, grads.fusion.as_mut()) {
            fusion_backward(
                &tr,
                &params.fusion[i],
                &mut fusion_grads[i],
                &sample.f_img,
                &text[i],
                &dpooled,
                cfg.fusion_heads,
            )?;
        }
    }
    Ok((loss, grads))
}

fn fusion_backward(
    tr: &crate::fusion::CrossAttentionTrace,
    w: &FusionWeights,
    g: &mut FusionWeights,
    f_img: &Tensor,
    f_text: &Tensor,
    dpooled: &[f64],
    num_heads: usize,
) -> Result<()> {
    let (n, d) = (f_img.rows(), f_img.cols());
    let t = f_text.rows();
    let inv_n = 1.0 / n as f64;

    // Mean pool, then the LayerNorm affine map and normalization.
    let mut dres = Tensor::zeros(&[n, d]);
    for r in 0..n {
        let xhat = tr.normalized.row(r);
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            let dh = dpooled[j] * inv_n;
            g.ln_gamma.data_mut()[j] += dh * xhat[j];
            g.ln_beta.data_mut()[j] += dh;
            dxhat[j] = dh * w.ln_gamma.data()[j];
        }
        let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx_x = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = tr.inv_std[r];
        for (j, o) in dres.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[j] - mean_dx - xhat[j] * mean_dx_x);
        }
    }

    // a = concat · W_O; the residual passes f_img straight through as a constant.
    g.w_o.add_assign(&tr.concat.t_matmul(&dres)?)?;
    let dconcat = dres.matmul_t(&w.w_o)?;

    let dk = d / num_heads;
    let scale = attention_scale(d, num_heads);
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk_t = Tensor::zeros(&[t, d]);
    let mut dv = Tensor::zeros(&[t, d]);
    for (h, probs) in tr.weights.iter().enumerate() {
        let cols = h * dk..(h + 1) * dk;
        for r in 0..n {
            let dout = &dconcat.row(r)[cols.clone()];
            let p = probs.row(r);
            let dp: Vec<f64> = (0..t)
                .map(|s| dout.iter().zip(&tr.v.row(s)[cols.clone()]).map(|(a, b)| a * b).sum())
                .collect();
            for s in 0..t {
                for (o, &x) in dv.row_mut(s)[cols.clone()].iter_mut().zip(dout) {
                    *o += p[s] * x;
                }
            }
            let centre: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for s in 0..t {
                let dlogit = p[s] * (dp[s] - centre) / scale;
                for (o, &kv) in dq.row_mut(r)[cols.clone()].iter_mut().zip(&tr.k.row(s)[cols.clone()]) {
                    *o += dlogit * kv;
                }
                for (o, &qv) in dk_t.row_mut(s)[cols.clone()].iter_mut().zip(&tr.q.row(r)[cols.clone()]) {
                    *o += dlogit * qv;
                }
            }
        }
    }
    g.w_q.add_assign(&f_img.t_matmul(&dq)?)?;
    g.w_k.add_assign(&f_text.t_matmul(&dk_t)?)?;
    g.w_v.add_assign(&f_text.t_matmul(&dv)?)?;
    Ok(())
}

/// Loss only, for finite-difference checks.
pub fn batch_loss(
    params: &TrainableParams,
    data: &FeatureSet,
    batch: &[usize],
    cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    ablation: Ablation,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in batch {
        let probs = crate::model::attribute_probabilities(params, cfg, &data.samples[i], &data.text, ablation)?;
        let losses = probs
            .iter()
            .zip(&data.labels[i])
            .map(|(p, &y)| attribute_loss(p, y, loss_cfg))
            .collect::<Result<Vec<_>>>()?;
        total += crate::heads::total_loss(&losses)?;
    }
    Ok(total / batch.len() as f64)
}
