//! Pooled baselines trained on the shared feature set: multinomial logistic regression
//! and a small pointwise-convolution network.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{minibatches, N_CLASSES};
use crate::nn::{cross_entropy, softmax_rows, LayerSpec, Mode, Optimizer, OptimizerConfig, SeededRng, Sequential};
use crate::tensor::Tensor;

pub const LOGREG_MAX_ITER: usize = 1000;
/// Stop early once every gradient entry is below this magnitude.
pub const LOGREG_GRAD_TOL: f64 = 1e-6;
pub const CNN_EPOCHS: usize = 50;
pub const CNN_BATCH: usize = 64;
pub const CNN_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentralizedKind {
    LogReg,
    Cnn1d,
}

impl CentralizedKind {
    pub fn name(self) -> &'static str {
        match self {
            CentralizedKind::LogReg => "logreg",
            CentralizedKind::Cnn1d => "cnn1d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "logreg" => Ok(CentralizedKind::LogReg),
            "cnn1d" | "cnn" => Ok(CentralizedKind::Cnn1d),
            _ => Err(Error::Unknown { kind: "centralized model", name: name.to_string() }),
        }
    }
}

pub trait Classifier: Send {
    fn fit(&mut self, x: &Tensor, labels: &[usize]) -> Result<()>;
    /// Class probabilities `[n, C]`.
    fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor>;
}

pub fn build_centralized(kind: CentralizedKind, seed: u64) -> Box<dyn Classifier> {
    match kind {
        CentralizedKind::LogReg => Box::new(LogisticRegression::default()),
        CentralizedKind::Cnn1d => Box::new(CentralizedCnn::new(seed)),
    }
}

/// Balanced class weights `n / (C · n_c)`; classes absent from `labels` get weight 0.
pub fn balanced_class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { n / (classes as f64 * c as f64) }).collect()
}

/// Column means and standard deviations; constant columns get unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let (n, f) = (x.rows(), x.row_width());
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.into_iter().map(|s| (s / n as f64).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let f = x.row_width();
        let data = x.data().iter().enumerate().map(|(i, v)| (v - self.mean[i % f]) / self.scale[i % f]).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

/// Multinomial logistic regression on standardized inputs, fitted by full-batch gradient
/// descent on the class-weighted cross-entropy. The step is `1/L` with `L` a power-iteration
/// estimate of the loss curvature bound `½ λ_max(Xᵀ D X / n)` over bias-augmented rows.
#[derive(Debug, Clone, Default)]
pub struct LogisticRegression {
    standardizer: Option<Standardizer>,
    /// `[C, F + 1]`, bias in the last column.
    weights: Vec<f64>,
    features: usize,
    pub iterations_run: usize,
}

impl LogisticRegression {
    fn logits(&self, x: &Tensor) -> Tensor {
        let (n, f) = (x.rows(), self.features);
        let mut out = vec![0.0; n * N_CLASSES];
        for r in 0..n {
            let row = x.row(r);
            for c in 0..N_CLASSES {
                let w = &self.weights[c * (f + 1)..(c + 1) * (f + 1)];
                out[r * N_CLASSES + c] = w[f] + row.iter().zip(w).map(|(a, b)| a * b).fold(0.0, |s, v| s + v);
            }
        }
        Tensor::matrix(n, N_CLASSES, out).expect("n × C")
    }

    fn curvature_bound(x: &Tensor, sample_w: &[f64]) -> f64 {
        let (n, f) = (x.rows(), x.row_width());
        let mut v = vec![1.0 / ((f + 1) as f64).sqrt(); f + 1];
        let mut lambda = 1.0;
        for _ in 0..50 {
            let mut next = vec![0.0; f + 1];
            for r in 0..n {
                let row = x.row(r);
                let proj = v[f] + row.iter().zip(&v).map(|(a, b)| a * b).fold(0.0, |s, t| s + t);
                let s = sample_w[r] * proj / n as f64;
                for (acc, a) in next.iter_mut().zip(row) {
                    *acc += s * a;
                }
                next[f] += s;
            }
            let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = next.into_iter().map(|a| a / norm).collect();
        }
        0.5 * lambda
    }
}

impl Classifier for LogisticRegression {
    fn fit(&mut self, x: &Tensor, labels: &[usize]) -> Result<()> {
        if x.rows() != labels.len() || labels.is_empty() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), labels.len())));
        }
        let st = Standardizer::fit(x);
        let xs = st.apply(x);
        self.standardizer = Some(st);
        let (n, f) = (xs.rows(), xs.row_width());
        self.features = f;
        self.weights = vec![0.0; N_CLASSES * (f + 1)];
        let cw = balanced_class_weights(labels, N_CLASSES);
        let sample_w: Vec<f64> = labels.iter().map(|&y| cw[y]).collect();
        let step = 1.0 / Self::curvature_bound(&xs, &sample_w).max(1e-12);
        self.iterations_run = 0;
        for _ in 0..LOGREG_MAX_ITER {
            let ce = cross_entropy(&self.logits(&xs), labels, Some(&cw))?;
            let mut grad = vec![0.0; self.weights.len()];
            for r in 0..n {
                let row = xs.row(r);
                for c in 0..N_CLASSES {
                    let g = ce.grad.data()[r * N_CLASSES + c];
                    let gw = &mut grad[c * (f + 1)..(c + 1) * (f + 1)];
                    for (acc, a) in gw.iter_mut().zip(row) {
                        *acc += g * a;
                    }
                    gw[f] += g;
                }
            }
            self.iterations_run += 1;
            if grad.iter().all(|g| g.abs() < LOGREG_GRAD_TOL) {
                break;
            }
            for (w, g) in self.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
        Ok(())
    }

    fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        let st =
            self.standardizer.as_ref().ok_or_else(|| Error::Config("logistic regression used before fit".into()))?;
        if x.row_width() != self.features {
            return Err(Error::Shape(format!("fitted on {} features, got {}", self.features, x.row_width())));
        }
        Ok(softmax_rows(&self.logits(&st.apply(x))))
    }
}

/// conv(32) → conv(64) → dense → softmax with kernel size 1, trained by Adam.
pub struct CentralizedCnn {
    seed: u64,
    standardizer: Option<Standardizer>,
    net: Option<Sequential>,
}

impl CentralizedCnn {
    pub fn new(seed: u64) -> Self {
        Self { seed, standardizer: None, net: None }
    }

    pub fn specs(inputs: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv1d(inputs, 32),
            LayerSpec::Relu,
            LayerSpec::conv1d(32, 64),
            LayerSpec::Relu,
            LayerSpec::dense_xavier(64, N_CLASSES),
            LayerSpec::Softmax,
        ]
    }

    fn logits_net(&mut self) -> &mut Sequential {
        self.net.as_mut().expect("fitted")
    }
}

impl Classifier for CentralizedCnn {
    fn fit(&mut self, x: &Tensor, labels: &[usize]) -> Result<()> {
        if x.rows() != labels.len() || labels.is_empty() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), labels.len())));
        }
        let st = Standardizer::fit(x);
        let xs = st.apply(x);
        self.standardizer = Some(st);
        let mut rng = SeededRng::seed_from_u64(self.seed);
        let mut specs = Self::specs(xs.row_width());
        specs.pop();
        let mut net = Sequential::new("cnn", specs, &mut rng)?;
        let mut opt = Optimizer::new(OptimizerConfig::adam(CNN_LR))?;
        for _ in 0..CNN_EPOCHS {
            for batch in minibatches(xs.rows(), CNN_BATCH, &mut rng) {
                let xb = xs.select_rows(&batch);
                let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                net.zero_grad();
                let logits = net.forward(&xb, Mode::Train, &mut rng)?;
                let ce = cross_entropy(&logits, &yb, None)?;
                net.backward(&ce.grad)?;
                opt.step(net.params_mut())?;
            }
        }
        self.net = Some(net);
        Ok(())
    }

    fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        let st = self.standardizer.clone().ok_or_else(|| Error::Config("CNN used before fit".into()))?;
        let xs = st.apply(x);
        let mut rng = SeededRng::seed_from_u64(0);
        let logits = self.logits_net().forward(&xs, Mode::Eval, &mut rng)?;
        Ok(softmax_rows(&logits))
    }
}
