use crate::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::model::TrainableParams;
use crate::tensor::Tensor;
use crate::training::backward::GradientSet;

/// SGD or Adam (bias-corrected) over the trainable tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(&TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: lr,
            ..TrainConfig::default()
        })
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(&TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: lr,
            ..TrainConfig::default()
        })
    }

    /// Updates exactly the tensors that have gradients; fusion blocks are left
    /// alone when `grads.fusion` is `None`.
    pub fn step(&mut self, params: &mut TrainableParams, grads: &GradientSet) -> Result<()> {
        let targets = params.tensors_mut(grads.fusion.is_some());
        let grads: Vec<&Tensor> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        self.apply(targets, &grads)
    }

    pub fn apply(&mut self, mut params: Vec<&mut Tensor>, grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Input(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer step", p.shape(), g.shape()));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                    self.second = self.first.clone();
                }
                if self.first.len() != grads.len() {
                    return Err(Error::Input("parameter set changed between optimizer steps".into()));
                }
                let c1 = 1.0 - self.beta1.powi(self.steps);
                let c2 = 1.0 - self.beta2.powi(self.steps);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * d;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * d * d;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
