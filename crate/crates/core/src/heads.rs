//! Per-attribute classification heads and the composite loss.

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::rng::{seeded_normal, Prng};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    /// `[d_model × K]`.
    pub w: Tensor,
    /// `[K]`.
    pub b: Tensor,
}

impl HeadWeights {
    pub fn init(d_model: usize, num_classes: usize, rng: &mut Prng) -> Self {
        Self {
            w: seeded_normal(&[d_model, num_classes], rng.next_u64(), 1.0 / (d_model as f64).sqrt()),
            b: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn zeros_like(d_model: usize, num_classes: usize) -> Self {
        Self {
            w: Tensor::zeros(&[d_model, num_classes]),
            b: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }
}

/// Mean over the rows of `[N × d]` patch features.
pub fn pool(h: &Tensor) -> Tensor {
    h.mean_rows()
}

/// Logits `z = pooled·W + b` and probabilities `softmax(z)`.
pub fn head_forward(pooled: &Tensor, w: &HeadWeights) -> Result<(Tensor, Tensor)> {
    if pooled.len() != w.w.rows() {
        return Err(Error::shape("head_forward", pooled.shape(), w.w.shape()));
    }
    let z = pooled.reshape(vec![1, pooled.len()])?.matmul(&w.w)?.reshape(vec![w.num_classes()])?.add(&w.b)?;
    let p = z.softmax_rows();
    Ok((z, p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

/// Argmax with ties going to the lowest index.
pub fn predict(p: &Tensor) -> Prediction {
    let mut best = 0;
    for (i, &v) in p.data().iter().enumerate().skip(1) {
        if v > p.data()[best] {
            best = i;
        }
    }
    Prediction {
        class: best,
        confidence: p.data()[best],
    }
}

/// `λ_ce·CE_ε + λ_focal·FL` for one attribute.
///
/// `CE_ε = −Σ_k q_k ln p_k` against the smoothed target (`q_y = 1−ε`, every
/// other class `ε/(K−1)`); `FL = −(1−p_y)^γ ln p_y` against the hard target.
pub fn attribute_loss(p: &Tensor, target: usize, cfg: &LossConfig) -> Result<f64> {
    let k = p.len();
    if target >= k {
        return Err(Error::Input(format!("label {target} out of range for {k} classes")));
    }
    let ln = |v: f64| v.max(PROB_FLOOR).ln();
    let off = cfg.smoothing / (k - 1) as f64;
    let ce: f64 = -p
        .data()
        .iter()
        .enumerate()
        .map(|(c, &pc)| if c == target { 1.0 - cfg.smoothing } else { off } * ln(pc))
        .sum::<f64>();
    let py = p.data()[target];
    let focal = -(1.0 - py).max(0.0).powf(cfg.focal_gamma) * ln(py);
    let loss = cfg.lambda_ce * ce + cfg.lambda_focal * focal;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss for label {target}")));
    }
    Ok(loss)
}

/// Gradient of [`attribute_loss`] with respect to the logits that produced `p`.
pub fn attribute_loss_grad(p: &Tensor, target: usize, cfg: &LossConfig) -> Tensor {
    let k = p.len();
    let off = cfg.smoothing / (k - 1) as f64;
    let py = p.data()[target].max(PROB_FLOOR);
    let one_minus = (1.0 - py).max(0.0);
    let gamma = cfg.focal_gamma;
    // d FL / d p_y
    let growth = if gamma == 0.0 || one_minus == 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0) * py.ln()
    };
    let dfl_dpy = growth - one_minus.powf(gamma) / py;
    let g = p
        .data()
        .iter()
        .enumerate()
        .map(|(c, &pc)| {
            let q = if c == target { 1.0 - cfg.smoothing } else { off };
            let dce = pc - q;
            let dpy_dz = py * (if c == target { 1.0 } else { 0.0 } - pc);
            cfg.lambda_ce * dce + cfg.lambda_focal * dfl_dpy * dpy_dz
        })
        .collect();
    Tensor::vector(g)
}

/// Mean of per-attribute losses.
pub fn total_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Config("total loss over zero attributes".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
