//! Proximal-coupled personalized models: each client optimizes its own copy θ of the
//! network while a quadratic term `(λ/2)‖θ − w‖²` keeps it near the received global `w`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{add_proximal_gradient, ClientData, ClientModel, LocalTraining};
use crate::models::fedper::{sigmoid_stack, ENCODER_WIDTHS};
use crate::models::{minibatches, predict_in_chunks, N_CLASSES};
use crate::nn::{cross_entropy, LayerSpec, Mode, NamedTensor, SeededRng, Sequential};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PFedMeConfig {
    pub lambda: f64,
    pub inner_steps: usize,
    pub personal_lr: f64,
}

impl Default for PFedMeConfig {
    fn default() -> Self {
        Self { lambda: 15.0, inner_steps: 5, personal_lr: 1e-3 }
    }
}

impl PFedMeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("pfedme.lambda must be positive, got {}", self.lambda)));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("pfedme.inner_steps must be at least 1".into()));
        }
        if !(self.personal_lr > 0.0) {
            return Err(Error::Config(format!("pfedme.lr must be positive, got {}", self.personal_lr)));
        }
        Ok(())
    }
}

/// One inner step `θ ← θ − lr (∇f(θ) + λ(θ − w))`, applied in place.
pub fn personalized_step(theta: &mut [f64], data_grad: &[f64], w: &[f64], lambda: f64, lr: f64) {
    for ((t, g), w) in theta.iter_mut().zip(data_grad).zip(w) {
        *t -= lr * (g + lambda * (*t - w));
    }
}

pub struct PFedMeModel {
    cfg: PFedMeConfig,
    theta: Sequential,
    global: Vec<Tensor>,
}

impl PFedMeModel {
    pub fn new(inputs: usize, cfg: PFedMeConfig, shared_rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        if inputs == 0 {
            return Err(Error::Config("pFedMe needs at least one input feature".into()));
        }
        let mut specs = sigmoid_stack(inputs);
        specs.push(LayerSpec::dense_xavier(ENCODER_WIDTHS[2], N_CLASSES));
        let theta = Sequential::new("shared", specs, shared_rng)?;
        let global = theta.params().map(Tensor::detached).collect();
        Ok(Self { cfg, theta, global })
    }

    pub fn all_tensor_names(&self) -> Vec<String> {
        self.theta.named_tensors().into_iter().map(|t| t.name).collect()
    }

    pub fn config(&self) -> &PFedMeConfig {
        &self.cfg
    }

    pub fn personalized(&self) -> &Sequential {
        &self.theta
    }
}

impl ClientModel for PFedMeModel {
    fn shared_state(&self) -> Vec<NamedTensor> {
        self.theta.named_tensors()
    }

    fn private_state(&self) -> Vec<NamedTensor> {
        Vec::new()
    }

    /// Stores `w`; the personalized θ is kept for prediction until the next round starts.
    fn receive_global(&mut self, global: &[NamedTensor]) -> Result<()> {
        let mut probe = self.theta.named_tensors();
        for t in &mut probe {
            let src = global
                .iter()
                .find(|g| g.name == t.name)
                .ok_or_else(|| Error::Unknown { kind: "tensor", name: t.name.clone() })?;
            t.tensor.assign(&src.tensor)?;
        }
        self.global = probe.into_iter().map(|t| t.tensor).collect();
        Ok(())
    }

    fn train_round(&mut self, data: &ClientData, opts: &LocalTraining, rng: &mut SeededRng) -> Result<f64> {
        for (p, w) in self.theta.params_mut().zip(&self.global) {
            p.assign(w)?;
        }
        let (lambda, lr) = (self.cfg.lambda, self.cfg.personal_lr);
        let (mut total, mut seen) = (0.0, 0usize);
        for _ in 0..opts.epochs {
            for batch in minibatches(data.n_rows(), opts.batch_size, rng) {
                let x = data.shared.select_rows(&batch);
                let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                let mut last = 0.0;
                for step in 0..self.cfg.inner_steps {
                    self.theta.zero_grad();
                    let logits = self.theta.forward(&x, Mode::Train, rng)?;
                    let ce = cross_entropy(&logits, &y, None)?;
                    self.theta.backward(&ce.grad)?;
                    add_proximal_gradient(self.theta.params_mut(), &self.global, opts.proximal_mu)?;
                    for (p, w) in self.theta.params_mut().zip(&self.global) {
                        let g = p.grad().expect("backward filled every gradient").to_vec();
                        personalized_step(p.data_mut(), &g, w.data(), lambda, lr);
                    }
                    if step == 0 {
                        last = ce.loss;
                    }
                }
                total += last * batch.len() as f64;
                seen += batch.len();
            }
        }
        Ok(if seen == 0 { 0.0 } else { total / seen as f64 })
    }

    fn predict_proba(&mut self, data: &ClientData) -> Result<Tensor> {
        predict_in_chunks(data, |part, rng| self.theta.forward(&part.shared, Mode::Eval, rng))
    }
}
