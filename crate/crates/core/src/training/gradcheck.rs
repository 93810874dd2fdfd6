//! Analytic gradients against central finite differences.

use crate::config::{Ablation, LossConfig, ModelConfig};
use crate::error::Result;
use crate::model::{FeatureSet, TrainableParams};
use crate::rng::Prng;
use crate::training::backward::{batch_loss, forward_backward};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Entries where both gradients are below this magnitude are compared absolutely.
pub const NEAR_ZERO: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many entries per tensor, sampled with `seed`.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
    /// Test hook: perturbs one analytic gradient entry before comparing.
    pub corrupt_gradient: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            max_entries_per_tensor: None,
            seed: 0,
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < tolerance)
    }
}

/// Relative error `|a − n| / max(|a|, |n|)`, or 0 when both are near zero and
/// agree to within [`NEAR_ZERO`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < NEAR_ZERO {
        if diff <= NEAR_ZERO {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

pub fn gradient_check(
    params: &TrainableParams,
    data: &FeatureSet,
    batch: &[usize],
    cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    ablation: Ablation,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let with_fusion = ablation == Ablation::Full;
    let (_, grads) = forward_backward(params, data, batch, cfg, loss_cfg, ablation)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();

    let mut rng = Prng::new(opts.seed);
    let mut probe = params.clone();
    let count = probe.tensors_mut(with_fusion).len();
    let mut groups = Vec::with_capacity(count);
    for ti in 0..count {
        let (name, grad) = &analytic[ti];
        let len = grad.len();
        let mut entries: Vec<usize> = (0..len).collect();
        if let Some(max) = opts.max_entries_per_tensor {
            if len > max {
                rng.shuffle(&mut entries);
                entries.truncate(max);
                entries.sort_unstable();
            }
        }
        let mut result = GroupResult {
            name: name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for &j in &entries {
            let original = probe.tensors_mut(with_fusion)[ti].data()[j];
            probe.tensors_mut(with_fusion)[ti].data_mut()[j] = original + opts.step;
            let up = batch_loss(&probe, data, batch, cfg, loss_cfg, ablation)?;
            probe.tensors_mut(with_fusion)[ti].data_mut()[j] = original - opts.step;
            let down = batch_loss(&probe, data, batch, cfg, loss_cfg, ablation)?;
            probe.tensors_mut(with_fusion)[ti].data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * opts.step);
            let mut a = grad[j];
            if opts.corrupt_gradient && ti == 0 && j == entries[0] {
                a += 1e-3 + a.abs();
            }
            result.max_rel_error = result.max_rel_error.max(relative_error(a, numeric));
            result.max_abs_error = result.max_abs_error.max((a - numeric).abs());
        }
        groups.push(result);
    }
    Ok(GradCheckReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_rules() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-10, -1e-10), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!(relative_error(1e-9, 1e-7) > 0.9);
    }
}
