//! Feature-aware personalized model: a shared encoder over the shared feature set, a
//! private local encoder over client-only features plus the detached shared embedding,
//! and a private fusion head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fed::{add_proximal_gradient, ClientData, ClientModel, LocalTraining};
use crate::models::{minibatches, predict_in_chunks, N_CLASSES};
use crate::nn::gradcheck::GradProbe;
use crate::nn::{
    cross_entropy, Layer, LayerSpec, Mode, NamedTensor, Optimizer, OptimizerConfig, SeededRng, Sequential,
};
use crate::tensor::Tensor;

pub const EMBED_DIM: usize = 64;
pub const HIDDEN: usize = 128;
pub const DROPOUT: f64 = 0.3;
pub const ATTENTION_HIDDEN: usize = 32;
pub const CNN_CHANNELS: (usize, usize) = (64, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FedFapVariant {
    Feedforward,
    Attention,
    Cnn1d,
}

impl FedFapVariant {
    pub const ALL: [FedFapVariant; 3] = [FedFapVariant::Feedforward, FedFapVariant::Attention, FedFapVariant::Cnn1d];

    pub fn name(self) -> &'static str {
        match self {
            FedFapVariant::Feedforward => "feedforward",
            FedFapVariant::Attention => "attention",
            FedFapVariant::Cnn1d => "cnn1d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Unknown { kind: "model variant", name: name.to_string() })
    }
}

/// Which embeddings reach the fusion head (test hook for path isolation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionInput {
    Both,
    LocalOnly,
    SharedOnly,
}

fn block(inputs: usize, outputs: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::dense(inputs, outputs), LayerSpec::batchnorm(outputs), LayerSpec::Relu, LayerSpec::dropout(DROPOUT)]
}

fn conv_stack(inputs: usize) -> Vec<LayerSpec> {
    let (c1, c2) = CNN_CHANNELS;
    vec![
        LayerSpec::conv1d(inputs, c1),
        LayerSpec::batchnorm(c1),
        LayerSpec::Relu,
        LayerSpec::conv1d(c1, c2),
        LayerSpec::batchnorm(c2),
        LayerSpec::Relu,
    ]
}

fn shared_specs(variant: FedFapVariant, fs: usize) -> Vec<LayerSpec> {
    match variant {
        FedFapVariant::Feedforward => [block(fs, HIDDEN), block(HIDDEN, HIDDEN), block(HIDDEN, EMBED_DIM)].concat(),
        FedFapVariant::Attention => [
            block(fs, HIDDEN),
            block(HIDDEN, HIDDEN),
            vec![LayerSpec::AttentionResidual { dim: HIDDEN, hidden: ATTENTION_HIDDEN }],
            block(HIDDEN, EMBED_DIM),
        ]
        .concat(),
        FedFapVariant::Cnn1d => [
            conv_stack(fs),
            vec![LayerSpec::dense(CNN_CHANNELS.1, EMBED_DIM), LayerSpec::Relu, LayerSpec::dropout(DROPOUT)],
        ]
        .concat(),
    }
}

fn local_pre_specs(variant: FedFapVariant, fl: usize) -> Vec<LayerSpec> {
    match variant {
        FedFapVariant::Feedforward | FedFapVariant::Attention => [block(fl, HIDDEN), block(HIDDEN, HIDDEN)].concat(),
        FedFapVariant::Cnn1d => conv_stack(fl),
    }
}

fn local_proj_specs(variant: FedFapVariant, inputs: usize) -> Vec<LayerSpec> {
    match variant {
        FedFapVariant::Feedforward | FedFapVariant::Attention => block(inputs, EMBED_DIM),
        FedFapVariant::Cnn1d => vec![LayerSpec::dense(inputs, EMBED_DIM), LayerSpec::Relu, LayerSpec::dropout(DROPOUT)],
    }
}

fn fusion_specs(variant: FedFapVariant) -> Vec<LayerSpec> {
    let head = vec![LayerSpec::Relu, LayerSpec::dropout(DROPOUT), LayerSpec::dense_xavier(EMBED_DIM, N_CLASSES)];
    let first = match variant {
        FedFapVariant::Attention => {
            LayerSpec::GatedFusion { shared_dim: EMBED_DIM, local_dim: EMBED_DIM, out_dim: EMBED_DIM }
        }
        _ => LayerSpec::dense(2 * EMBED_DIM, EMBED_DIM),
    };
    [vec![first], head].concat()
}

pub struct FedFapModel {
    variant: FedFapVariant,
    shared_dim: usize,
    local_dim: usize,
    shared: Sequential,
    local_pre: Option<Sequential>,
    local_proj: Sequential,
    fusion: Sequential,
    detach: Layer,
    detach_enabled: bool,
    fusion_input: FusionInput,
    local_pre_width: usize,
}

impl FedFapModel {
    /// `shared_rng` initializes the shared encoder (identical across clients for the same
    /// seed); `private_rng` initializes the local encoder and fusion head.
    pub fn new(
        variant: FedFapVariant,
        shared_dim: usize,
        local_dim: usize,
        shared_rng: &mut SeededRng,
        private_rng: &mut SeededRng,
    ) -> Result<Self> {
        if shared_dim == 0 {
            return Err(Error::Config("FedFAP needs at least one shared feature".into()));
        }
        let shared = Sequential::new("shared", shared_specs(variant, shared_dim), shared_rng)?;
        let local_pre = if local_dim > 0 {
            Some(Sequential::new("local_enc", local_pre_specs(variant, local_dim), private_rng)?)
        } else {
            None
        };
        let local_pre_width = if local_dim > 0 { HIDDEN } else { 0 };
        let local_proj =
            Sequential::new("local_proj", local_proj_specs(variant, local_pre_width + EMBED_DIM), private_rng)?;
        let fusion = Sequential::new("fusion", fusion_specs(variant), private_rng)?;
        Ok(Self {
            variant,
            shared_dim,
            local_dim,
            shared,
            local_pre,
            local_proj,
            fusion,
            detach: Layer::new(LayerSpec::Detach, private_rng)?,
            detach_enabled: true,
            fusion_input: FusionInput::Both,
            local_pre_width,
        })
    }

    pub fn variant(&self) -> FedFapVariant {
        self.variant
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.shared_dim, self.local_dim)
    }

    pub fn shared_encoder(&self) -> &Sequential {
        &self.shared
    }

    pub fn shared_encoder_mut(&mut self) -> &mut Sequential {
        &mut self.shared
    }

    pub fn fusion_mut(&mut self) -> &mut Sequential {
        &mut self.fusion
    }

    pub fn set_fusion_input(&mut self, input: FusionInput) {
        self.fusion_input = input;
    }

    /// Test-only control: with `false` the shared embedding feeds the local encoder
    /// without the detach edge, so local-path gradients reach the shared encoder.
    #[doc(hidden)]
    pub fn set_detach_enabled(&mut self, enabled: bool) {
        self.detach_enabled = enabled;
    }

    /// Names of every tensor the model holds.
    pub fn all_tensor_names(&self) -> Vec<String> {
        self.sequences().flat_map(Sequential::named_tensors).map(|t| t.name).collect()
    }

    pub fn param_count(&self) -> usize {
        self.sequences().map(Sequential::param_count).sum()
    }

    fn sequences(&self) -> impl Iterator<Item = &Sequential> {
        std::iter::once(&self.shared).chain(self.local_pre.as_ref()).chain([&self.local_proj, &self.fusion])
    }

    fn sequences_mut(&mut self) -> impl Iterator<Item = &mut Sequential> {
        std::iter::once(&mut self.shared).chain(self.local_pre.as_mut()).chain([&mut self.local_proj, &mut self.fusion])
    }

    pub fn zero_grad(&mut self) {
        self.sequences_mut().for_each(Sequential::zero_grad);
    }

    /// Shared embedding `[n, 64]`.
    pub fn embed_shared<R: Rng + ?Sized>(&mut self, xs: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let h = self.shared.forward(xs, mode, rng)?;
        let n = h.rows();
        h.reshaped(vec![n, EMBED_DIM])
    }

    /// Logits `[n, C]`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        xs: &Tensor,
        xl: Option<&Tensor>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let hs = self.embed_shared(xs, mode, rng)?;
        let hd = if self.detach_enabled { self.detach.forward(&hs, mode, rng)? } else { hs.detached() };
        let local_in = match (&mut self.local_pre, xl) {
            (Some(pre), Some(xl)) => {
                let h = pre.forward(xl, mode, rng)?;
                let n = h.rows();
                Tensor::concat_cols(&h.reshaped(vec![n, HIDDEN])?, &hd)?
            }
            (None, _) => hd,
            (Some(_), None) => return Err(Error::Shape(format!("model expects {} local features", self.local_dim))),
        };
        let hl = self.local_proj.forward(&local_in, mode, rng)?;
        let hl = hl.reshaped(vec![hs.rows(), EMBED_DIM])?;
        let fused =
            Tensor::concat_cols(&self.mask(hs, FusionInput::LocalOnly), &self.mask(hl, FusionInput::SharedOnly))?;
        self.fusion.forward(&fused, mode, rng)
    }

    fn mask(&self, t: Tensor, dropped_when: FusionInput) -> Tensor {
        if self.fusion_input == dropped_when {
            Tensor::zeros(t.shape().to_vec())
        } else {
            t
        }
    }

    /// Backpropagates `grad_logits` from the last train-mode forward.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let g = self.fusion.backward(grad_logits)?;
        let (gs, gl) = Tensor::split_cols(&g, EMBED_DIM)?;
        let gs = self.mask(gs, FusionInput::LocalOnly);
        let gl = self.mask(gl, FusionInput::SharedOnly);
        let g_local_in = self.local_proj.backward(&gl)?;
        let g_hd = match &mut self.local_pre {
            Some(pre) => {
                let (g_pre, g_hd) = Tensor::split_cols(&g_local_in, self.local_pre_width)?;
                pre.backward(&g_pre)?;
                g_hd
            }
            None => g_local_in,
        };
        let through = if self.detach_enabled { self.detach.backward(&g_hd)? } else { g_hd };
        let total: Vec<f64> = gs.data().iter().zip(through.data()).map(|(a, b)| a + b).collect();
        let n = gs.rows();
        self.shared.backward(&Tensor::matrix(n, EMBED_DIM, total)?)?;
        Ok(())
    }

    /// True when, with only the local embedding reaching the fusion head, one backward
    /// pass leaves every shared-encoder gradient exactly zero. Restores the fusion setting.
    pub fn shared_gradient_isolation_check(
        &mut self,
        xs: &Tensor,
        xl: Option<&Tensor>,
        labels: &[usize],
        rng: &mut SeededRng,
    ) -> Result<bool> {
        let saved = self.fusion_input;
        self.fusion_input = FusionInput::LocalOnly;
        self.zero_grad();
        let result = (|| {
            let logits = self.forward(xs, xl, Mode::Train, rng)?;
            let ce = cross_entropy(&logits, labels, None)?;
            self.backward(&ce.grad)?;
            Ok(self.shared.params().all(|p| p.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0))))
        })();
        self.fusion_input = saved;
        result
    }

    fn all_params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.sequences_mut().flat_map(|s| s.params_mut())
    }

    fn private_sequences(&self) -> impl Iterator<Item = &Sequential> {
        self.local_pre.iter().chain([&self.local_proj, &self.fusion])
    }
}

/// Whole-model finite-difference probe under mean cross-entropy. Every parameter is
/// shifted by U(−0.1, 0.1) first so residual scales and batchnorm affines are generic.
pub struct FedFapProbe {
    model: FedFapModel,
    xs: Tensor,
    xl: Option<Tensor>,
    labels: Vec<usize>,
    forward_rng: SeededRng,
    private_only: bool,
}

impl FedFapProbe {
    /// With `private_only`, only local-encoder and fusion tensors are exposed; the shared
    /// encoder's analytic gradient deliberately omits the detached path.
    pub fn new(
        mut model: FedFapModel,
        xs: Tensor,
        xl: Option<Tensor>,
        labels: Vec<usize>,
        private_only: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        for p in model.all_params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        model.zero_grad();
        let mut probe = Self { model, xs, xl, labels, forward_rng: rng.clone(), private_only };
        let mut replay = probe.forward_rng.clone();
        let logits = probe.model.forward(&probe.xs, probe.xl.as_ref(), Mode::Train, &mut replay)?;
        let ce = cross_entropy(&logits, &probe.labels, None)?;
        probe.model.backward(&ce.grad)?;
        Ok(probe)
    }

    fn skipped(&self) -> usize {
        if self.private_only {
            self.model.shared.params().count()
        } else {
            0
        }
    }
}

impl GradProbe for FedFapProbe {
    fn tensor_count(&self) -> usize {
        self.model.sequences().map(|s| s.params().count()).sum::<usize>() - self.skipped()
    }

    fn tensor_name(&self, i: usize) -> String {
        let mut i = i + self.skipped();
        for s in self.model.sequences() {
            let n = s.params().count();
            if i < n {
                return format!("{} param {i}", s.name());
            }
            i -= n;
        }
        "out of range".into()
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        let skip = self.skipped();
        self.model.all_params_mut().nth(i + skip).expect("index below tensor_count")
    }

    fn loss(&mut self) -> Result<f64> {
        let mut replay = self.forward_rng.clone();
        let logits = self.model.forward(&self.xs, self.xl.as_ref(), Mode::Train, &mut replay)?;
        Ok(cross_entropy(&logits, &self.labels, None)?.loss)
    }
}

impl ClientModel for FedFapModel {
    fn shared_state(&self) -> Vec<NamedTensor> {
        self.shared.named_tensors()
    }

    fn private_state(&self) -> Vec<NamedTensor> {
        self.private_sequences().flat_map(Sequential::named_tensors).collect()
    }

    fn receive_global(&mut self, global: &[NamedTensor]) -> Result<()> {
        self.shared.load(global)
    }

    fn train_round(&mut self, data: &ClientData, opts: &LocalTraining, rng: &mut SeededRng) -> Result<f64> {
        if data.shared_dim() != self.shared_dim || data.local_dim() != self.local_dim {
            return Err(Error::Shape(format!(
                "model built for ({}, {}) features, data has ({}, {})",
                self.shared_dim,
                self.local_dim,
                data.shared_dim(),
                data.local_dim()
            )));
        }
        let anchor: Vec<Tensor> = self.shared.params().map(Tensor::detached).collect();
        let mut opt = Optimizer::new(OptimizerConfig::adam(opts.learning_rate))?;
        let mut total = 0.0;
        let mut seen = 0usize;
        for _ in 0..opts.epochs {
            for batch in minibatches(data.n_rows(), opts.batch_size, rng) {
                let part = data.subset(&batch);
                self.zero_grad();
                let logits = self.forward(&part.shared, part.local.as_ref(), Mode::Train, rng)?;
                let ce = cross_entropy(&logits, &part.labels, None)?;
                self.backward(&ce.grad)?;
                add_proximal_gradient(self.shared.params_mut(), &anchor, opts.proximal_mu)?;
                opt.step(self.all_params_mut())?;
                total += ce.loss * batch.len() as f64;
                seen += batch.len();
            }
        }
        Ok(if seen == 0 { 0.0 } else { total / seen as f64 })
    }

    fn predict_proba(&mut self, data: &ClientData) -> Result<Tensor> {
        predict_in_chunks(data, |part, rng| self.forward(&part.shared, part.local.as_ref(), Mode::Eval, rng))
    }
}
