//! Training of the fusion blocks and heads over precomputed encoder features.

pub mod backward;
pub mod gradcheck;
pub mod optim;

pub use backward::{batch_loss, forward_backward, GradientSet};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use optim::Optimizer;

use serde::Serialize;

use crate::config::{LossConfig, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{predict_all, FeatureSet, TrainableParams};
use crate::rng::Prng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub loss: f64,
    pub mean_accuracy: f64,
    pub f1: f64,
}

/// Salt mixed into the training seed for the batch-order stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464C_4521;

/// Runs `epochs` passes of shuffled mini-batches. Only `params` changes; the
/// feature set (and so the encoders that produced it) is read-only.
pub fn train(
    params: &mut TrainableParams,
    data: &FeatureSet,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<Vec<EpochRecord>> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut optimizer = Optimizer::new(train_cfg);
    let mut order_rng = Prng::new(train_cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let (loss, grads) = forward_backward(params, data, batch, cfg, loss_cfg, train_cfg.ablation)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;
            optimizer.step(params, &grads)?;
        }
        let report = evaluate(params, data, cfg, train_cfg.ablation)?;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            mean_accuracy: report.mean_accuracy,
            f1: report.mean_f1,
        });
    }
    Ok(history)
}

pub fn evaluate(
    params: &TrainableParams,
    data: &FeatureSet,
    cfg: &ModelConfig,
    ablation: crate::config::Ablation,
) -> Result<MetricsReport> {
    let preds: Vec<Vec<usize>> = predict_all(params, cfg, data, ablation)?
        .into_iter()
        .map(|row| row.into_iter().map(|p| p.class).collect())
        .collect();
    MetricsReport::from_classes(&preds, &data.labels, &cfg.attributes)
}

/// History as CSV: `epoch,loss,mA,F1`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,mA,F1\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.mean_accuracy, r.f1));
    }
    out
}
