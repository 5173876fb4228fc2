//! Central finite-difference gradient checking.
//!
//! A [`GradProbe`] exposes a scalar loss and the tensors to perturb; the
//! analytic gradient must already sit in each tensor's grad slot.

use rand::seq::index::sample;
use rand::Rng;

use super::{cross_entropy, Layer, LayerSpec, Mode, SeededRng, Sequential};
use crate::error::Result;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

pub trait GradProbe {
    fn tensor_count(&self) -> usize;
    fn tensor_name(&self, i: usize) -> String;
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor;
    /// Loss at the current values. Must be deterministic between calls.
    fn loss(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<String>,
    pub coordinates_checked: usize,
}

/// Compares stored analytic gradients against central differences. Tensors longer
/// than `max_per_tensor` are checked on a random coordinate subset drawn from `rng`.
pub fn check<P: GradProbe, R: Rng + ?Sized>(
    probe: &mut P,
    max_per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, coordinates_checked: 0 };
    for t in 0..probe.tensor_count() {
        let len = probe.tensor_mut(t).len();
        let coords: Vec<usize> =
            if len <= max_per_tensor { (0..len).collect() } else { sample(rng, len, max_per_tensor).into_vec() };
        let analytic: Vec<f64> = {
            let tensor = probe.tensor_mut(t);
            coords.iter().map(|&j| tensor.grad().map_or(0.0, |g| g[j])).collect()
        };
        for (&j, &a) in coords.iter().zip(&analytic) {
            let original = probe.tensor_mut(t).data()[j];
            probe.tensor_mut(t).data_mut()[j] = original + STEP;
            let plus = probe.loss()?;
            probe.tensor_mut(t).data_mut()[j] = original - STEP;
            let minus = probe.loss()?;
            probe.tensor_mut(t).data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some(format!("{}[{j}]: analytic {a:e}, numeric {numeric:e}", probe.tensor_name(t)));
            }
        }
    }
    Ok(report)
}

/// A single layer under the linear loss `Σ r ⊙ layer(x)` with fixed random `r`.
pub struct LayerProbe {
    layer: Layer,
    input: Tensor,
    projection: Vec<f64>,
    forward_rng: SeededRng,
}

impl LayerProbe {
    /// Builds the layer, randomizes every parameter in U(−1, 1), draws a
    /// Gaussian-ish input of `input_shape`, and runs forward/backward once.
    pub fn new(spec: LayerSpec, input_shape: Vec<usize>, rng: &mut SeededRng) -> Result<Self> {
        let mut layer = Layer::new(spec, rng)?;
        for p in layer.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let n: usize = input_shape.iter().product();
        let input = Tensor::new(input_shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let forward_rng = rng.clone();
        let mut probe = Self { layer, input, projection: Vec::new(), forward_rng };
        let mut replay = probe.forward_rng.clone();
        let out = probe.layer.forward(&probe.input, Mode::Train, &mut replay)?;
        probe.projection = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream = Tensor::new(out.shape().to_vec(), probe.projection.clone())?;
        let dx = probe.layer.backward(&upstream)?;
        probe.input.grad_mut().copy_from_slice(dx.data());
        Ok(probe)
    }

    pub fn input_grad(&self) -> &[f64] {
        self.input.grad().expect("set by construction")
    }

    pub fn layer_mut(&mut self) -> &mut Layer {
        &mut self.layer
    }
}

impl GradProbe for LayerProbe {
    fn tensor_count(&self) -> usize {
        self.layer.params().len() + 1
    }

    fn tensor_name(&self, i: usize) -> String {
        let names = self.layer.param_names();
        names.get(i).map_or_else(|| "input".to_string(), |n| n.to_string())
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        let np = self.layer.params().len();
        if i < np {
            &mut self.layer.params_mut()[i]
        } else {
            &mut self.input
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let mut replay = self.forward_rng.clone();
        let out = self.layer.forward(&self.input, Mode::Train, &mut replay)?;
        Ok(out.data().iter().zip(&self.projection).map(|(a, b)| a * b).sum())
    }
}

/// A chain of sequences under mean cross-entropy, with every parameter perturbed.
pub struct ChainProbe {
    chain: Vec<Sequential>,
    input: Tensor,
    labels: Vec<usize>,
    forward_rng: SeededRng,
}

impl ChainProbe {
    /// Shifts every parameter by U(−0.1, 0.1), then runs forward/backward once.
    pub fn new(mut chain: Vec<Sequential>, input: Tensor, labels: Vec<usize>, rng: &mut SeededRng) -> Result<Self> {
        for s in &mut chain {
            for p in s.params_mut() {
                for v in p.data_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            s.zero_grad();
        }
        let mut probe = Self { chain, input, labels, forward_rng: rng.clone() };
        let mut replay = probe.forward_rng.clone();
        let logits = probe.forward(&mut replay)?;
        let mut g = cross_entropy(&logits, &probe.labels, None)?.grad;
        for s in probe.chain.iter_mut().rev() {
            g = s.backward(&g)?;
        }
        Ok(probe)
    }

    fn forward(&mut self, rng: &mut SeededRng) -> Result<Tensor> {
        self.forward_tracking_relu(rng).map(|(h, _)| h)
    }

    /// Output logits and the smallest |input| any ReLU saw.
    fn forward_tracking_relu(&mut self, rng: &mut SeededRng) -> Result<(Tensor, f64)> {
        let mut h = self.input.clone();
        let mut margin = f64::INFINITY;
        for s in &mut self.chain {
            for layer in s.layers_mut() {
                if *layer.spec() == LayerSpec::Relu {
                    margin = h.data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
                h = layer.forward(&h, Mode::Train, rng)?;
            }
            let n = h.rows();
            let w = h.len() / n.max(1);
            h = h.reshaped(vec![n, w])?;
        }
        Ok((h, margin))
    }

    /// Distance of the nearest ReLU input from its kink at the probe point. When it is
    /// within a few [`STEP`]s, central differences straddle the kink and disagree with
    /// the one-sided analytic derivative, so callers should redraw the point.
    pub fn relu_margin(&mut self) -> Result<f64> {
        let mut replay = self.forward_rng.clone();
        Ok(self.forward_tracking_relu(&mut replay)?.1)
    }
}

impl GradProbe for ChainProbe {
    fn tensor_count(&self) -> usize {
        self.chain.iter().map(|s| s.params().count()).sum()
    }

    fn tensor_name(&self, i: usize) -> String {
        let mut i = i;
        for s in &self.chain {
            let n = s.params().count();
            if i < n {
                return format!("{} param {i}", s.name());
            }
            i -= n;
        }
        "out of range".into()
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        self.chain.iter_mut().flat_map(|s| s.params_mut()).nth(i).expect("index below tensor_count")
    }

    fn loss(&mut self) -> Result<f64> {
        let mut replay = self.forward_rng.clone();
        let logits = self.forward(&mut replay)?;
        Ok(cross_entropy(&logits, &self.labels, None)?.loss)
    }
}
