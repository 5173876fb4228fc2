//! Layer kinds with exact reverse-mode gradients.
//!
//! Activations are batch-major: the leading extent is the batch, trailing
//! extents are features. `conv1d` and `batchnorm` additionally accept
//! `[batch, channels, length]`; a 2-D input is read as length 1, so a
//! kernel-size-1 convolution over a feature vector is a pointwise channel mix.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::linalg;
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / fan_in); for weights feeding ReLU.
    He,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)); for weights feeding sigmoid or linear outputs.
    Xavier,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        init: Init,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        init: Init,
    },
    BatchNorm {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    Sigmoid,
    Softmax,
    /// `h + γ·(σ(W₂·relu(W₁h + b₁) + b₂) ⊙ h)` with learnable scalar γ starting at 0.
    AttentionResidual {
        dim: usize,
        hidden: usize,
    },
    /// Input is `[h_s ; h_l]`; output `g ⊙ P_s h_s + (1 − g) ⊙ P_l h_l` with `g = σ(W_g [h_s; h_l])`.
    GatedFusion {
        shared_dim: usize,
        local_dim: usize,
        out_dim: usize,
    },
    /// Identity forward, zero gradient backward.
    Detach,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs, init: Init::He }
    }

    pub fn dense_xavier(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs, init: Init::Xavier }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv1d { in_channels, out_channels, kernel_size: 1, init: Init::He }
    }

    pub fn batchnorm(features: usize) -> Self {
        LayerSpec::BatchNorm { features, eps: BATCHNORM_EPS, momentum: BATCHNORM_MOMENTUM }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::AttentionResidual { .. } => "attention-residual",
            LayerSpec::GatedFusion { .. } => "gated-fusion",
            LayerSpec::Detach => "detach",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{} {name} must be positive", self.kind_name())))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                positive("inputs", inputs)?;
                positive("outputs", outputs)
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, .. } => {
                positive("in_channels", in_channels)?;
                positive("out_channels", out_channels)?;
                if kernel_size != 1 {
                    return Err(Error::Config(format!("conv1d kernel size must be 1, got {kernel_size}")));
                }
                Ok(())
            }
            LayerSpec::BatchNorm { features, eps, momentum } => {
                positive("features", features)?;
                if !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::Config("batchnorm needs eps > 0 and momentum in [0,1]".into()));
                }
                Ok(())
            }
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")))
                }
            }
            LayerSpec::AttentionResidual { dim, hidden } => {
                positive("dim", dim)?;
                positive("hidden", hidden)
            }
            LayerSpec::GatedFusion { shared_dim, local_dim, out_dim } => {
                positive("shared_dim", shared_dim)?;
                positive("local_dim", local_dim)?;
                positive("out_dim", out_dim)
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax | LayerSpec::Detach => Ok(()),
        }
    }

    /// Learnable parameter names and shapes, in storage order.
    fn param_layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                vec![("weight", vec![outputs, inputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, .. } => {
                vec![("weight", vec![out_channels, in_channels, kernel_size]), ("bias", vec![out_channels])]
            }
            LayerSpec::BatchNorm { features, .. } => {
                vec![("gamma", vec![features]), ("beta", vec![features])]
            }
            LayerSpec::AttentionResidual { dim, hidden } => vec![
                ("w1", vec![hidden, dim]),
                ("b1", vec![hidden]),
                ("w2", vec![dim, hidden]),
                ("b2", vec![dim]),
                ("scale", vec![1]),
            ],
            LayerSpec::GatedFusion { shared_dim, local_dim, out_dim } => vec![
                ("gate_weight", vec![out_dim, shared_dim + local_dim]),
                ("gate_bias", vec![out_dim]),
                ("shared_proj_weight", vec![out_dim, shared_dim]),
                ("shared_proj_bias", vec![out_dim]),
                ("local_proj_weight", vec![out_dim, local_dim]),
                ("local_proj_bias", vec![out_dim]),
            ],
            _ => vec![],
        }
    }

    fn buffer_layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::BatchNorm { features, .. } => {
                vec![("running_mean", vec![features]), ("running_var", vec![features])]
            }
            _ => vec![],
        }
    }
}

fn uniform_init<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, fan_out: usize, init: Init, rng: &mut R) {
    let limit = match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
    for w in t.data_mut() {
        *w = dist.sample(rng);
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Empty,
    Input(Tensor),
    Output(Tensor),
    Mask(Vec<f64>),
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, shape: Vec<usize> },
    Attention { h: Tensor, pre_hidden: Vec<f64>, hidden: Vec<f64>, gate: Vec<f64> },
    Gated { x: Tensor, gate: Vec<f64>, proj_shared: Vec<f64>, proj_local: Vec<f64> },
    Detach(Vec<usize>),
}

/// One layer instance: spec, parameters, buffers and the cache of its last train-mode forward.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
    cache: Cache,
    gate_clamp: Option<f64>,
}

/// `[n, c, len]` data reordered to `[n·len, c]` rows; a no-op copy when `len == 1`.
fn to_channel_last(data: &[f64], c: usize, len: usize) -> Vec<f64> {
    if len == 1 {
        return data.to_vec();
    }
    let mut out = vec![0.0; data.len()];
    for (s, sample) in data.chunks_exact(c * len).enumerate() {
        for ch in 0..c {
            for l in 0..len {
                out[(s * len + l) * c + ch] = sample[ch * len + l];
            }
        }
    }
    out
}

fn from_channel_last(data: Vec<f64>, c: usize, len: usize) -> Vec<f64> {
    if len == 1 {
        return data;
    }
    let mut out = vec![0.0; data.len()];
    for (s, sample) in out.chunks_exact_mut(c * len).enumerate() {
        for ch in 0..c {
            for l in 0..len {
                sample[ch * len + l] = data[(s * len + l) * c + ch];
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params: Vec<Tensor> = spec.param_layout().into_iter().map(|(_, s)| Tensor::zeros(s)).collect();
        let buffers: Vec<Tensor> = spec
            .buffer_layout()
            .into_iter()
            .map(|(name, s)| if name == "running_var" { Tensor::filled(s, 1.0) } else { Tensor::zeros(s) })
            .collect();
        match spec {
            LayerSpec::Dense { inputs, outputs, init } => uniform_init(&mut params[0], inputs, outputs, init, rng),
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, init } => {
                uniform_init(&mut params[0], in_channels * kernel_size, out_channels, init, rng)
            }
            LayerSpec::BatchNorm { .. } => params[0].data_mut().fill(1.0),
            LayerSpec::AttentionResidual { dim, hidden } => {
                uniform_init(&mut params[0], dim, hidden, Init::He, rng);
                uniform_init(&mut params[2], hidden, dim, Init::Xavier, rng);
            }
            LayerSpec::GatedFusion { shared_dim, local_dim, out_dim } => {
                uniform_init(&mut params[0], shared_dim + local_dim, out_dim, Init::Xavier, rng);
                uniform_init(&mut params[2], shared_dim, out_dim, Init::Xavier, rng);
                uniform_init(&mut params[4], local_dim, out_dim, Init::Xavier, rng);
            }
            _ => {}
        }
        Ok(Self { spec, params, buffers, cache: Cache::Empty, gate_clamp: None })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.spec.param_layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor] {
        &mut self.buffers
    }

    pub fn buffer_names(&self) -> Vec<&'static str> {
        self.spec.buffer_layout().into_iter().map(|(n, _)| n).collect()
    }

    /// Pins every gate of a gated-fusion layer to `value` (test hook; `None` restores learning).
    pub fn set_gate_clamp(&mut self, value: Option<f64>) {
        self.gate_clamp = value;
    }

    /// Number of features a batch row carries after this layer, given the input row width.
    pub fn output_width(&self, input_width: usize) -> usize {
        match self.spec {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv1d { in_channels, out_channels, .. } => out_channels * (input_width / in_channels),
            LayerSpec::GatedFusion { out_dim, .. } => out_dim,
            _ => input_width,
        }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        self.cache = Cache::Empty;
        let out = match self.spec.clone() {
            LayerSpec::Dense { inputs, outputs, .. } => {
                self.check_width(x, inputs)?;
                let n = x.rows();
                let y = linalg::affine(x.data(), n, inputs, self.params[0].data(), self.params[1].data(), outputs);
                if mode == Mode::Train {
                    self.cache = Cache::Input(x.clone());
                }
                Tensor::matrix(n, outputs, y)?
            }
            LayerSpec::Conv1d { in_channels, out_channels, .. } => {
                self.conv_forward(x, in_channels, out_channels, mode)?
            }
            LayerSpec::BatchNorm { features, eps, momentum } => {
                self.batchnorm_forward(x, features, eps, momentum, mode)?
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    if mode == Mode::Train {
                        self.cache = Cache::Mask(vec![1.0; x.len()]);
                    }
                    x.detached()
                } else {
                    let keep = 1.0 / (1.0 - rate);
                    // Drop when a uniform 32-bit draw falls below rate · 2³².
                    let threshold = (rate * 4_294_967_296.0) as u64;
                    let mut bits = vec![0u32; x.len()];
                    rng.fill(&mut bits[..]);
                    let mask: Vec<f64> =
                        bits.into_iter().map(|b| if u64::from(b) >= threshold { keep } else { 0.0 }).collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    self.cache = Cache::Mask(mask);
                    Tensor::new(x.shape().to_vec(), data)?
                }
            }
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                if mode == Mode::Train {
                    self.cache = Cache::Input(x.detached());
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::Sigmoid => {
                let y = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid(v)).collect())?;
                if mode == Mode::Train {
                    self.cache = Cache::Output(y.clone());
                }
                y
            }
            LayerSpec::Softmax => {
                let y = softmax_rows(x);
                if mode == Mode::Train {
                    self.cache = Cache::Output(y.clone());
                }
                y
            }
            LayerSpec::AttentionResidual { dim, hidden } => self.attention_forward(x, dim, hidden, mode)?,
            LayerSpec::GatedFusion { shared_dim, local_dim, out_dim } => {
                self.gated_forward(x, shared_dim, local_dim, out_dim, mode)?
            }
            LayerSpec::Detach => {
                if mode == Mode::Train {
                    self.cache = Cache::Detach(x.shape().to_vec());
                }
                x.detached()
            }
        };
        out.ensure_finite(&format!("{} forward", self.spec.kind_name()))?;
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the layer input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = std::mem::replace(&mut self.cache, Cache::Empty);
        let kind = self.spec.kind_name();
        let dx = match (self.spec.clone(), cache) {
            (_, Cache::Empty) => return Err(Error::BackwardWithoutForward(kind.into())),
            (LayerSpec::Dense { inputs, outputs, .. }, Cache::Input(x)) => {
                let n = x.rows();
                self.check_grad_shape(grad_out, n * outputs)?;
                let (w, b) = self.params.split_at_mut(1);
                linalg::accumulate_affine_grads(
                    grad_out.data(),
                    x.data(),
                    n,
                    inputs,
                    outputs,
                    w[0].grad_mut(),
                    b[0].grad_mut(),
                );
                let dx = linalg::input_grad(grad_out.data(), n, outputs, w[0].data(), inputs);
                Tensor::new(x.shape().to_vec(), dx)?
            }
            (LayerSpec::Conv1d { in_channels, out_channels, .. }, Cache::Input(x)) => {
                self.conv_backward(&x, grad_out, in_channels, out_channels)?
            }
            (LayerSpec::BatchNorm { features, .. }, Cache::BatchNorm { xhat, inv_std, shape }) => {
                self.batchnorm_backward(grad_out, features, &xhat, &inv_std, shape)?
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                self.check_grad_shape(grad_out, mask.len())?;
                let data = grad_out.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad_out.shape().to_vec(), data)?
            }
            (LayerSpec::Relu, Cache::Input(x)) => {
                self.check_grad_shape(grad_out, x.len())?;
                let data = grad_out.data().iter().zip(x.data()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            (LayerSpec::Sigmoid, Cache::Output(y)) => {
                self.check_grad_shape(grad_out, y.len())?;
                let data = grad_out.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                Tensor::new(y.shape().to_vec(), data)?
            }
            (LayerSpec::Softmax, Cache::Output(y)) => {
                self.check_grad_shape(grad_out, y.len())?;
                let w = y.row_width();
                let mut data = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(w).zip(grad_out.data().chunks_exact(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(&s, &g)| s * (g - dot)));
                }
                Tensor::new(y.shape().to_vec(), data)?
            }
            (LayerSpec::AttentionResidual { dim, hidden }, Cache::Attention { h, pre_hidden, hidden: hid, gate }) => {
                self.attention_backward(grad_out, dim, hidden, &h, &pre_hidden, &hid, &gate)?
            }
            (
                LayerSpec::GatedFusion { shared_dim, local_dim, out_dim },
                Cache::Gated { x, gate, proj_shared, proj_local },
            ) => self.gated_backward(grad_out, shared_dim, local_dim, out_dim, &x, &gate, &proj_shared, &proj_local)?,
            (LayerSpec::Detach, Cache::Detach(shape)) => {
                let n: usize = shape.iter().product();
                self.check_grad_shape(grad_out, n)?;
                Tensor::zeros(shape)
            }
            (_, _) => return Err(Error::BackwardWithoutForward(kind.into())),
        };
        dx.ensure_finite(&format!("{kind} backward"))?;
        for p in &self.params {
            p.ensure_finite(&format!("{kind} parameter gradient"))?;
        }
        Ok(dx)
    }

    fn check_width(&self, x: &Tensor, expected: usize) -> Result<()> {
        if x.shape().len() < 2 || x.row_width() != expected {
            return Err(Error::Shape(format!(
                "{} expects {expected} features per row, got input shape {:?}",
                self.spec.kind_name(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_grad_shape(&self, g: &Tensor, expected_len: usize) -> Result<()> {
        if g.len() != expected_len {
            return Err(Error::Shape(format!(
                "{} backward expected {expected_len} gradient values, got {:?}",
                self.spec.kind_name(),
                g.shape()
            )));
        }
        Ok(())
    }

    /// Returns `(batch, channels, length)` for a conv/batchnorm input.
    fn channel_layout(&self, x: &Tensor, channels: usize) -> Result<(usize, usize)> {
        match x.shape() {
            [n, c] if *c == channels => Ok((*n, 1)),
            [n, c, l] if *c == channels => Ok((*n, *l)),
            other => Err(Error::Shape(format!(
                "{} expects [batch, {channels}] or [batch, {channels}, length], got {other:?}",
                self.spec.kind_name()
            ))),
        }
    }

    fn conv_forward(&mut self, x: &Tensor, cin: usize, cout: usize, mode: Mode) -> Result<Tensor> {
        let (n, len) = self.channel_layout(x, cin)?;
        let (w, b) = (self.params[0].data(), self.params[1].data());
        let y = if len == 1 {
            linalg::affine(x.data(), n, cin, w, b, cout)
        } else {
            let mut y = vec![0.0; n * cout * len];
            for s in 0..n {
                let xs = &x.data()[s * cin * len..(s + 1) * cin * len];
                let ys = &mut y[s * cout * len..(s + 1) * cout * len];
                for o in 0..cout {
                    for l in 0..len {
                        let mut acc = b[o];
                        for c in 0..cin {
                            acc += w[o * cin + c] * xs[c * len + l];
                        }
                        ys[o * len + l] = acc;
                    }
                }
            }
            y
        };
        if mode == Mode::Train {
            self.cache = Cache::Input(x.clone());
        }
        Tensor::new(vec![n, cout, len], y)
    }

    fn conv_backward(&mut self, x: &Tensor, g: &Tensor, cin: usize, cout: usize) -> Result<Tensor> {
        let (n, len) = self.channel_layout(x, cin)?;
        self.check_grad_shape(g, n * cout * len)?;
        let (wt, bt) = self.params.split_at_mut(1);
        if len == 1 {
            linalg::accumulate_affine_grads(g.data(), x.data(), n, cin, cout, wt[0].grad_mut(), bt[0].grad_mut());
            let dx = linalg::input_grad(g.data(), n, cout, wt[0].data(), cin);
            return Tensor::new(x.shape().to_vec(), dx);
        }
        let w = wt[0].data().to_vec();
        let mut dx = vec![0.0; x.len()];
        {
            let dw = wt[0].grad_mut();
            for s in 0..n {
                let xs = &x.data()[s * cin * len..(s + 1) * cin * len];
                let gs = &g.data()[s * cout * len..(s + 1) * cout * len];
                for o in 0..cout {
                    for l in 0..len {
                        let go = gs[o * len + l];
                        for c in 0..cin {
                            dw[o * cin + c] += go * xs[c * len + l];
                            dx[s * cin * len + c * len + l] += go * w[o * cin + c];
                        }
                    }
                }
            }
        }
        let db = bt[0].grad_mut();
        for s in 0..n {
            for o in 0..cout {
                for l in 0..len {
                    db[o] += g.data()[s * cout * len + o * len + l];
                }
            }
        }
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn batchnorm_forward(&mut self, x: &Tensor, c: usize, eps: f64, momentum: f64, mode: Mode) -> Result<Tensor> {
        let (_, len) = self.channel_layout(x, c)?;
        let xr = to_channel_last(x.data(), c, len);
        let count = (xr.len() / c) as f64;
        let (gamma, beta) = (self.params[0].data(), self.params[1].data());
        let mut y = vec![0.0; xr.len()];
        match mode {
            Mode::Eval => {
                let (rm, rv) = (self.buffers[0].data(), self.buffers[1].data());
                let scale: Vec<f64> = (0..c).map(|ch| gamma[ch] / (rv[ch] + eps).sqrt()).collect();
                for (yrow, xrow) in y.chunks_exact_mut(c).zip(xr.chunks_exact(c)) {
                    for ch in 0..c {
                        yrow[ch] = scale[ch] * (xrow[ch] - rm[ch]) + beta[ch];
                    }
                }
            }
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for row in xr.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; c];
                for row in xr.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = vec![0.0; xr.len()];
                for ((hrow, yrow), xrow) in xhat.chunks_exact_mut(c).zip(y.chunks_exact_mut(c)).zip(xr.chunks_exact(c))
                {
                    for ch in 0..c {
                        let h = (xrow[ch] - mean[ch]) * inv_std[ch];
                        hrow[ch] = h;
                        yrow[ch] = gamma[ch] * h + beta[ch];
                    }
                }
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let (rm, rv) = self.buffers.split_at_mut(1);
                for ch in 0..c {
                    let m = &mut rm[0].data_mut()[ch];
                    *m = (1.0 - momentum) * *m + momentum * mean[ch];
                    let v = &mut rv[0].data_mut()[ch];
                    *v = (1.0 - momentum) * *v + momentum * var[ch] * unbias;
                }
                self.cache = Cache::BatchNorm { xhat, inv_std, shape: x.shape().to_vec() };
            }
        }
        Tensor::new(x.shape().to_vec(), from_channel_last(y, c, len))
    }

    /// `xhat` is stored channel-last (`[n·len, c]`).
    fn batchnorm_backward(
        &mut self,
        g: &Tensor,
        c: usize,
        xhat: &[f64],
        inv_std: &[f64],
        shape: Vec<usize>,
    ) -> Result<Tensor> {
        self.check_grad_shape(g, xhat.len())?;
        let len = if shape.len() == 3 { shape[2] } else { 1 };
        let gr = to_channel_last(g.data(), c, len);
        let count = (xhat.len() / c) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (grow, hrow) in gr.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += grow[ch];
                sum_gx[ch] += grow[ch] * hrow[ch];
            }
        }
        for (acc, v) in self.params[0].grad_mut().iter_mut().zip(&sum_gx) {
            *acc += v;
        }
        for (acc, v) in self.params[1].grad_mut().iter_mut().zip(&sum_g) {
            *acc += v;
        }
        let gamma = self.params[0].data();
        let k: Vec<f64> = (0..c).map(|ch| gamma[ch] * inv_std[ch] / count).collect();
        let mut dx = vec![0.0; xhat.len()];
        for ((drow, grow), hrow) in dx.chunks_exact_mut(c).zip(gr.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                drow[ch] = k[ch] * (count * grow[ch] - sum_g[ch] - hrow[ch] * sum_gx[ch]);
            }
        }
        Tensor::new(shape, from_channel_last(dx, c, len))
    }

    fn attention_forward(&mut self, h: &Tensor, dim: usize, hidden: usize, mode: Mode) -> Result<Tensor> {
        self.check_width(h, dim)?;
        let n = h.rows();
        let p = &self.params;
        let pre_hidden = linalg::affine(h.data(), n, dim, p[0].data(), p[1].data(), hidden);
        let hid: Vec<f64> = pre_hidden.iter().map(|v| v.max(0.0)).collect();
        let logits = linalg::affine(&hid, n, hidden, p[2].data(), p[3].data(), dim);
        let gate: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
        let scale = p[4].data()[0];
        let y = h.data().iter().zip(&gate).map(|(&hv, &g)| hv + scale * g * hv).collect();
        if mode == Mode::Train {
            self.cache = Cache::Attention { h: h.detached(), pre_hidden, hidden: hid, gate };
        }
        Tensor::new(h.shape().to_vec(), y)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &mut self,
        g: &Tensor,
        dim: usize,
        hidden: usize,
        h: &Tensor,
        pre_hidden: &[f64],
        hid: &[f64],
        gate: &[f64],
    ) -> Result<Tensor> {
        let n = h.rows();
        self.check_grad_shape(g, n * dim)?;
        let scale = self.params[4].data()[0];
        let mut dh: Vec<f64> = g.data().iter().zip(gate).map(|(&gv, &a)| gv * (1.0 + scale * a)).collect();
        let mut dscale = 0.0;
        let mut dlogits = vec![0.0; n * dim];
        for i in 0..n * dim {
            let gh = g.data()[i] * h.data()[i];
            dscale += gh * gate[i];
            dlogits[i] = scale * gh * gate[i] * (1.0 - gate[i]);
        }
        self.params[4].grad_mut()[0] += dscale;
        {
            let (w2, rest) = self.params[2..4].split_at_mut(1);
            linalg::accumulate_affine_grads(&dlogits, hid, n, hidden, dim, w2[0].grad_mut(), rest[0].grad_mut());
        }
        let mut dhid = linalg::input_grad(&dlogits, n, dim, self.params[2].data(), hidden);
        for (d, &a) in dhid.iter_mut().zip(pre_hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        {
            let (w1, rest) = self.params[0..2].split_at_mut(1);
            linalg::accumulate_affine_grads(&dhid, h.data(), n, dim, hidden, w1[0].grad_mut(), rest[0].grad_mut());
        }
        linalg::add_input_grad(&dhid, n, hidden, self.params[0].data(), dim, &mut dh);
        Tensor::new(h.shape().to_vec(), dh)
    }

    fn gated_forward(&mut self, x: &Tensor, ds: usize, dl: usize, d: usize, mode: Mode) -> Result<Tensor> {
        self.check_width(x, ds + dl)?;
        let n = x.rows();
        let (hs, hl) = Tensor::split_cols(x, ds)?;
        let p = &self.params;
        let gate: Vec<f64> = match self.gate_clamp {
            Some(v) => vec![v; n * d],
            None => {
                linalg::affine(x.data(), n, ds + dl, p[0].data(), p[1].data(), d).into_iter().map(sigmoid).collect()
            }
        };
        let proj_shared = linalg::affine(hs.data(), n, ds, p[2].data(), p[3].data(), d);
        let proj_local = linalg::affine(hl.data(), n, dl, p[4].data(), p[5].data(), d);
        let y = (0..n * d).map(|i| gate[i] * proj_shared[i] + (1.0 - gate[i]) * proj_local[i]).collect();
        if mode == Mode::Train {
            self.cache = Cache::Gated { x: x.detached(), gate, proj_shared, proj_local };
        }
        Tensor::matrix(n, d, y)
    }

    #[allow(clippy::too_many_arguments)]
    fn gated_backward(
        &mut self,
        g: &Tensor,
        ds: usize,
        dl: usize,
        d: usize,
        x: &Tensor,
        gate: &[f64],
        proj_shared: &[f64],
        proj_local: &[f64],
    ) -> Result<Tensor> {
        let n = x.rows();
        self.check_grad_shape(g, n * d)?;
        let (hs, hl) = Tensor::split_cols(x, ds)?;
        let gd = g.data();
        let dps: Vec<f64> = (0..n * d).map(|i| gd[i] * gate[i]).collect();
        let dpl: Vec<f64> = (0..n * d).map(|i| gd[i] * (1.0 - gate[i])).collect();
        let clamped = self.gate_clamp.is_some();
        let dpre: Vec<f64> = (0..n * d)
            .map(|i| if clamped { 0.0 } else { gd[i] * (proj_shared[i] - proj_local[i]) * gate[i] * (1.0 - gate[i]) })
            .collect();
        let p = &mut self.params;
        {
            let (w, b) = p[0..2].split_at_mut(1);
            linalg::accumulate_affine_grads(&dpre, x.data(), n, ds + dl, d, w[0].grad_mut(), b[0].grad_mut());
        }
        {
            let (w, b) = p[2..4].split_at_mut(1);
            linalg::accumulate_affine_grads(&dps, hs.data(), n, ds, d, w[0].grad_mut(), b[0].grad_mut());
        }
        {
            let (w, b) = p[4..6].split_at_mut(1);
            linalg::accumulate_affine_grads(&dpl, hl.data(), n, dl, d, w[0].grad_mut(), b[0].grad_mut());
        }
        let mut dx = linalg::input_grad(&dpre, n, d, p[0].data(), ds + dl);
        let dhs = linalg::input_grad(&dps, n, d, p[2].data(), ds);
        let dhl = linalg::input_grad(&dpl, n, d, p[4].data(), dl);
        for r in 0..n {
            let row = &mut dx[r * (ds + dl)..(r + 1) * (ds + dl)];
            for (a, b) in row[..ds].iter_mut().zip(&dhs[r * ds..(r + 1) * ds]) {
                *a += b;
            }
            for (a, b) in row[ds..].iter_mut().zip(&dhl[r * dl..(r + 1) * dl]) {
                *a += b;
            }
        }
        Tensor::matrix(n, ds + dl, dx)
    }
}

/// Row-wise softmax over the trailing extents.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let w = x.row_width();
    let mut data = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(w) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            data.push(e);
        }
        data[start..].iter_mut().for_each(|e| *e /= sum);
    }
    Tensor::new(x.shape().to_vec(), data).expect("softmax preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dense(3, 3), &mut r).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        layer.params_mut()[0].data_mut().copy_from_slice(&eye);
        layer.params_mut()[1].data_mut().fill(0.0);
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let y = layer.forward(&x, Mode::Eval, &mut r).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let y = softmax_rows(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clips_negatives() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::Relu, &mut r).unwrap();
        let y = layer.forward(&Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap(), Mode::Eval, &mut r).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn scalar_product_rule() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dense(1, 1), &mut r).unwrap();
        layer.params_mut()[0].data_mut()[0] = 0.7;
        let x = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        layer.forward(&x, Mode::Train, &mut r).unwrap();
        layer.backward(&Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(layer.params()[0].grad().unwrap()[0], 2.0);
    }

    #[test]
    fn detach_blocks_gradient_exactly() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::Detach, &mut r).unwrap();
        let x = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let y = layer.forward(&x, Mode::Train, &mut r).unwrap();
        assert_eq!(y.data(), x.data());
        let dx = layer.backward(&Tensor::filled(vec![2, 2], 5.0)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dense(2, 2), &mut r).unwrap();
        let err = layer.backward(&Tensor::zeros(vec![1, 2])).unwrap_err();
        assert!(matches!(err, Error::BackwardWithoutForward(_)));
        // eval-mode forward leaves nothing to differentiate
        layer.forward(&Tensor::zeros(vec![1, 2]), Mode::Eval, &mut r).unwrap();
        assert!(layer.backward(&Tensor::zeros(vec![1, 2])).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dense(3, 2), &mut r).unwrap();
        assert!(matches!(layer.forward(&Tensor::zeros(vec![1, 4]), Mode::Eval, &mut r), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut r = rng();
        let conv = LayerSpec::Conv1d { in_channels: 2, out_channels: 2, kernel_size: 3, init: Init::He };
        assert!(Layer::new(conv, &mut r).is_err());
        assert!(Layer::new(LayerSpec::dropout(1.0), &mut r).is_err());
        assert!(Layer::new(LayerSpec::dropout(-0.1), &mut r).is_err());
    }

    #[test]
    fn non_finite_activation_is_a_hard_error() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dense(1, 1), &mut r).unwrap();
        let x = Tensor::matrix(1, 1, vec![f64::INFINITY]).unwrap();
        assert!(matches!(layer.forward(&x, Mode::Eval, &mut r), Err(Error::NonFinite(_))));
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::batchnorm(3), &mut r).unwrap();
        let data: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64) * 0.7 - 2.0 + (i % 3) as f64 * 5.0).collect();
        let y = layer.forward(&Tensor::matrix(10, 3, data).unwrap(), Mode::Train, &mut r).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..10).map(|i| y.data()[i * 3 + c]).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut r = rng();
        let mut layer = Layer::new(LayerSpec::dropout(0.3), &mut r).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(layer.forward(&x, Mode::Eval, &mut r).unwrap().data(), x.data());
    }
}
