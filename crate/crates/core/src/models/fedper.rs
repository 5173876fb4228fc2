//! Shared sigmoid encoder with a private classification head that never leaves the client.

use crate::error::{Error, Result};
use crate::fed::{add_proximal_gradient, ClientData, ClientModel, LocalTraining};
use crate::models::{minibatches, predict_in_chunks, N_CLASSES};
use crate::nn::{cross_entropy, LayerSpec, Mode, NamedTensor, Optimizer, OptimizerConfig, SeededRng, Sequential};
use crate::tensor::Tensor;

/// Hidden widths of the shared sigmoid encoder.
pub const ENCODER_WIDTHS: [usize; 3] = [16, 32, 16];

pub(crate) fn sigmoid_stack(inputs: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = inputs;
    for w in ENCODER_WIDTHS {
        specs.push(LayerSpec::dense_xavier(width, w));
        specs.push(LayerSpec::Sigmoid);
        width = w;
    }
    specs
}

pub struct FedPerModel {
    encoder: Sequential,
    head: Sequential,
}

impl FedPerModel {
    pub fn new(inputs: usize, shared_rng: &mut SeededRng, private_rng: &mut SeededRng) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::Config("FedPer needs at least one input feature".into()));
        }
        Ok(Self {
            encoder: Sequential::new("shared", sigmoid_stack(inputs), shared_rng)?,
            head: Sequential::new("head", vec![LayerSpec::dense_xavier(ENCODER_WIDTHS[2], N_CLASSES)], private_rng)?,
        })
    }

    pub fn all_tensor_names(&self) -> Vec<String> {
        self.encoder.named_tensors().into_iter().chain(self.head.named_tensors()).map(|t| t.name).collect()
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut SeededRng) -> Result<Tensor> {
        let h = self.encoder.forward(x, mode, rng)?;
        self.head.forward(&h, mode, rng)
    }
}

impl ClientModel for FedPerModel {
    fn shared_state(&self) -> Vec<NamedTensor> {
        self.encoder.named_tensors()
    }

    fn private_state(&self) -> Vec<NamedTensor> {
        self.head.named_tensors()
    }

    fn receive_global(&mut self, global: &[NamedTensor]) -> Result<()> {
        self.encoder.load(global)
    }

    fn train_round(&mut self, data: &ClientData, opts: &LocalTraining, rng: &mut SeededRng) -> Result<f64> {
        let anchor: Vec<Tensor> = self.encoder.params().map(Tensor::detached).collect();
        let mut opt = Optimizer::new(OptimizerConfig::adam(opts.learning_rate))?;
        let (mut total, mut seen) = (0.0, 0usize);
        for _ in 0..opts.epochs {
            for batch in minibatches(data.n_rows(), opts.batch_size, rng) {
                let x = data.shared.select_rows(&batch);
                let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                self.encoder.zero_grad();
                self.head.zero_grad();
                let logits = self.forward(&x, Mode::Train, rng)?;
                let ce = cross_entropy(&logits, &y, None)?;
                let g = self.head.backward(&ce.grad)?;
                self.encoder.backward(&g)?;
                add_proximal_gradient(self.encoder.params_mut(), &anchor, opts.proximal_mu)?;
                opt.step(self.encoder.params_mut().chain(self.head.params_mut()))?;
                total += ce.loss * batch.len() as f64;
                seen += batch.len();
            }
        }
        Ok(if seen == 0 { 0.0 } else { total / seen as f64 })
    }

    fn predict_proba(&mut self, data: &ClientData) -> Result<Tensor> {
        predict_in_chunks(data, |part, rng| self.forward(&part.shared, Mode::Eval, rng))
    }
}
