//! Ordered stack of layers sharing one name prefix.

use rand::Rng;

use super::{Layer, LayerSpec, Mode, NamedTensor, TensorKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sequential {
    name: String,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let layers = specs.into_iter().map(|s| Layer::new(s, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self { name: name.into(), layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let mut h = x.detached();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    /// Back-propagates `grad` through every layer; returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.detached();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Parameters and buffers named `{sequence}.{layer index}.{tensor}`.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (n, t) in layer.param_names().into_iter().zip(layer.params()) {
                out.push(NamedTensor::new(format!("{}.{i}.{n}", self.name), TensorKind::Param, t.detached()));
            }
            for (n, t) in layer.buffer_names().into_iter().zip(layer.buffers()) {
                out.push(NamedTensor::new(format!("{}.{i}.{n}", self.name), TensorKind::Buffer, t.detached()));
            }
        }
        out
    }

    /// Copies values for every tensor in `named` that belongs to this sequence.
    /// Each of this sequence's tensors must be present.
    pub fn load(&mut self, named: &[NamedTensor]) -> Result<()> {
        let prefix = format!("{}.", self.name);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let pnames = layer.param_names();
            let bnames = layer.buffer_names();
            let find = |n: &str| {
                let full = format!("{prefix}{i}.{n}");
                named.iter().find(|t| t.name == full).ok_or(Error::Unknown { kind: "tensor", name: full })
            };
            for (n, t) in pnames.iter().zip(layer.params_mut()) {
                t.assign(&find(n)?.tensor)?;
            }
            for (n, t) in bnames.iter().zip(layer.buffers_mut()) {
                t.assign(&find(n)?.tensor)?;
            }
        }
        Ok(())
    }
}
