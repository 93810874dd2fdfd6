//! Scaled dot-product attention over column-partitioned heads.
//!
//! Projections are full `d_model × d_model` matrices; head `h` owns columns
//! `h·d_k .. (h+1)·d_k` of the projected queries, keys and values.

use crate::error::{Error, Result};
use crate::tensor::{dot, softmax_in_place, Tensor};

/// Denominator of the attention logits, `√d_k` with `d_k = d_model / heads`.
pub fn attention_scale(d_model: usize, num_heads: usize) -> f64 {
    ((d_model / num_heads) as f64).sqrt()
}

/// Output of [`multi_head_attention`].
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Concatenated head outputs, `[Lq × d_model]`.
    pub concat: Tensor,
    /// Attention weights per head, each `[Lq × Lk]`.
    pub weights: Vec<Tensor>,
}

/// `concat_h softmax(Q_h K_hᵀ / √d_k) V_h`.
///
/// With `causal` set, query `t` attends only to keys `0..=t`; masked weights
/// are exactly zero and the masked keys never enter the computation, so row
/// `t` is bitwise independent of later positions.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    num_heads: usize,
    causal: bool,
) -> Result<AttentionOutput> {
    let d = q.cols();
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::Config(format!(
            "width {d} not divisible by {num_heads} heads"
        )));
    }
    let (lq, lk) = (q.rows(), k.rows());
    if causal && lq != lk {
        return Err(Error::shape("causal attention", q.shape(), k.shape()));
    }
    let dk = d / num_heads;
    let scale = attention_scale(d, num_heads);
    let mut concat = vec![0.0; lq * d];
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = h * dk..(h + 1) * dk;
        let mut w = vec![0.0; lq * lk];
        for t in 0..lq {
            let visible = if causal { t + 1 } else { lk };
            let qt = &q.row(t)[cols.clone()];
            let row = &mut w[t * lk..t * lk + visible];
            for (s, slot) in row.iter_mut().enumerate() {
                *slot = dot(qt, &k.row(s)[cols.clone()]) / scale;
            }
            softmax_in_place(row);
            let out = &mut concat[t * d + h * dk..t * d + (h + 1) * dk];
            for (s, &p) in row.iter().enumerate() {
                for (o, &vv) in out.iter_mut().zip(&v.row(s)[cols.clone()]) {
                    *o += p * vv;
                }
            }
        }
        weights.push(Tensor::new(vec![lq, lk], w)?);
    }
    Ok(AttentionOutput {
        concat: Tensor::new(vec![lq, d], concat)?,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_normal;

    #[test]
    fn scale_at_base_width() {
        assert_eq!(attention_scale(768, 8), 96f64.sqrt());
        assert_eq!(attention_scale(1536, 8), 192f64.sqrt());
    }

    #[test]
    fn single_key_copies_value() {
        let q = seeded_normal(&[3, 4], 1, 1.0);
        let k = seeded_normal(&[1, 4], 2, 1.0);
        let v = seeded_normal(&[1, 4], 3, 1.0);
        let out = multi_head_attention(&q, &k, &v, 2, false).unwrap();
        for t in 0..3 {
            assert_eq!(out.concat.row(t), v.row(0));
        }
        assert!(out.weights.iter().all(|w| w.data().iter().all(|&p| p == 1.0)));
    }

    #[test]
    fn causal_weights_are_lower_triangular() {
        let x = seeded_normal(&[5, 6], 7, 1.0);
        let out = multi_head_attention(&x, &x, &x, 3, true).unwrap();
        for w in &out.weights {
            for t in 0..5 {
                for s in t + 1..5 {
                    assert_eq!(w.row(t)[s], 0.0);
                }
                let total: f64 = w.row(t).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // One head, d = 2. Scores: q·k / √2.
        let q = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let k = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let out = multi_head_attention(&q, &k, &v, 1, false).unwrap();
        let a = (1.0 / 2f64.sqrt()).exp();
        let p0 = a / (a + 1.0);
        let p1 = 1.0 / (a + 1.0);
        assert!((out.concat.row(0)[0] - 2.0 * p0).abs() < 1e-15);
        assert!((out.concat.row(0)[1] - 4.0 * p1).abs() < 1e-15);
    }
}
