//! Server aggregators over the shared parameter set.
//!
//! FedAvg is the sample-weighted mean; FedProx aggregates like FedAvg and adds a proximal
//! term on the client side; FedAdam takes an adaptive step along the unweighted mean client
//! delta, without bias correction. Buffers (batchnorm running statistics) are always
//! combined by the sample-weighted mean, since they are not trained by gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NamedTensor, TensorKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub shared: Vec<NamedTensor>,
    pub n_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AggregatorKind {
    FedAvg,
    FedProx { mu: f64 },
    FedAdam { server_lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

pub const DEFAULT_PROX_MU: f64 = 0.01;

impl AggregatorKind {
    pub fn fedadam() -> Self {
        AggregatorKind::FedAdam { server_lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn fedprox() -> Self {
        AggregatorKind::FedProx { mu: DEFAULT_PROX_MU }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::FedProx { .. } => "fedprox",
            AggregatorKind::FedAdam { .. } => "fedadam",
        }
    }

    /// Client-side proximal coefficient (zero unless FedProx).
    pub fn proximal_mu(&self) -> f64 {
        match *self {
            AggregatorKind::FedProx { mu } => mu,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorKind::FedAvg => Ok(()),
            AggregatorKind::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                Err(Error::Config(format!("fed.mu must be non-negative, got {mu}")))
            }
            AggregatorKind::FedProx { .. } => Ok(()),
            AggregatorKind::FedAdam { server_lr, beta1, beta2, epsilon } => {
                if !(server_lr > 0.0) {
                    return Err(Error::Config(format!("fed.server_lr must be positive, got {server_lr}")));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::Config(format!("fed.betas must lie in [0, 1), got ({beta1}, {beta2})")));
                }
                if !(epsilon >= 0.0) {
                    return Err(Error::Config(format!("fed.epsilon must be non-negative, got {epsilon}")));
                }
                Ok(())
            }
        }
    }
}

fn sorted(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    let first = updates.first().ok_or_else(|| Error::Config("aggregation needs at least one client update".into()))?;
    let mut out: Vec<&ClientUpdate> = updates.iter().collect();
    out.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for u in &out {
        if u.n_k == 0 {
            return Err(Error::Degenerate(format!("client `{}` reported n_k = 0", u.client_id)));
        }
        check_layout(&first.shared, &u.shared, &u.client_id)?;
    }
    Ok(out)
}

fn check_layout(reference: &[NamedTensor], other: &[NamedTensor], who: &str) -> Result<()> {
    if reference.len() != other.len() {
        return Err(Error::Shape(format!("client `{who}` sent {} tensors, expected {}", other.len(), reference.len())));
    }
    for (a, b) in reference.iter().zip(other) {
        if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
            return Err(Error::Shape(format!(
                "client `{who}` tensor `{}` {:?} does not match `{}` {:?}",
                b.name,
                b.tensor.shape(),
                a.name,
                a.tensor.shape()
            )));
        }
    }
    Ok(())
}

/// Sample-weighted mean of tensor `i`, summed in sorted client order and clamped to the
/// elementwise client range so rounding never leaves the convex hull.
fn weighted_mean(updates: &[&ClientUpdate], i: usize) -> Tensor {
    let n: f64 = updates.iter().map(|u| u.n_k as f64).sum();
    let template = &updates[0].shared[i].tensor;
    let mut acc = vec![0.0; template.len()];
    let mut lo = vec![f64::INFINITY; template.len()];
    let mut hi = vec![f64::NEG_INFINITY; template.len()];
    for u in updates {
        let w = u.n_k as f64 / n;
        for (j, &v) in u.shared[i].tensor.data().iter().enumerate() {
            acc[j] += w * v;
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    for j in 0..acc.len() {
        acc[j] = acc[j].clamp(lo[j], hi[j]);
    }
    Tensor::new(template.shape().to_vec(), acc).expect("shape taken from a client tensor")
}

/// FedAvg: `w = Σ_k (n_k / n) w_k`.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<Vec<NamedTensor>> {
    let ordered = sorted(updates)?;
    Ok(ordered[0]
        .shared
        .iter()
        .enumerate()
        .map(|(i, t)| NamedTensor::new(t.name.clone(), t.kind, weighted_mean(&ordered, i)))
        .collect())
}

/// FedProx local objective `f + (μ/2)‖w_k − w_t‖²` and the proximal gradient `μ(w_k − w_t)`.
pub fn fedprox_local_objective(local_loss: f64, w_k: &[f64], w_t: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
    if !(mu >= 0.0) {
        return Err(Error::Config(format!("proximal coefficient must be non-negative, got {mu}")));
    }
    if w_k.len() != w_t.len() {
        return Err(Error::Shape(format!("proximal term over {} and {} values", w_k.len(), w_t.len())));
    }
    let mut sq = 0.0;
    let grad = w_k
        .iter()
        .zip(w_t)
        .map(|(a, b)| {
            let d = a - b;
            sq += d * d;
            mu * d
        })
        .collect();
    Ok((local_loss + 0.5 * mu * sq, grad))
}

/// Adds `μ(w − anchor)` to each parameter's gradient slot.
pub fn add_proximal_gradient<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    anchor: &[Tensor],
    mu: f64,
) -> Result<()> {
    if mu == 0.0 {
        return Ok(());
    }
    let mut count = 0;
    for (p, a) in params.into_iter().zip(anchor) {
        let (_, g) = fedprox_local_objective(0.0, p.data(), a.data(), mu)?;
        for (slot, v) in p.grad_mut().iter_mut().zip(g) {
            *slot += v;
        }
        count += 1;
    }
    if count != anchor.len() {
        return Err(Error::Shape(format!("proximal anchor has {} tensors, model has {count}", anchor.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorState {
    pub kind: AggregatorKind,
    pub global: Vec<NamedTensor>,
    /// First moments, one per global tensor (unused entries for buffers stay zero).
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Completed aggregation rounds.
    pub round: u64,
}

impl AggregatorState {
    pub fn new(kind: AggregatorKind, initial: Vec<NamedTensor>) -> Result<Self> {
        kind.validate()?;
        let m: Vec<Vec<f64>> = initial.iter().map(|t| vec![0.0; t.tensor.len()]).collect();
        Ok(Self { kind, v: m.clone(), m, global: initial, round: 0 })
    }

    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        if let Some(u) = updates.first() {
            check_layout(&self.global, &u.shared, &u.client_id)?;
        }
        let next = match self.kind {
            AggregatorKind::FedAvg | AggregatorKind::FedProx { .. } => aggregate_fedavg(updates)?,
            AggregatorKind::FedAdam { .. } => aggregate_fedadam(updates, self)?,
        };
        self.global = next;
        self.round += 1;
        Ok(())
    }
}

/// FedAdam: `Δ = (1/K) Σ_k (w_k − w)`, `m ← β1 m + (1−β1) Δ`, `v ← β2 v + (1−β2) Δ²`,
/// `w ← w + η m / (√v + ε)`. Updates the moments in `state`; the caller installs the result.
pub fn aggregate_fedadam(updates: &[ClientUpdate], state: &mut AggregatorState) -> Result<Vec<NamedTensor>> {
    let AggregatorKind::FedAdam { server_lr, beta1, beta2, epsilon } = state.kind else {
        return Err(Error::Config(format!("FedAdam step on a {} aggregator", state.kind.name())));
    };
    let ordered = sorted(updates)?;
    check_layout(&state.global, &ordered[0].shared, &ordered[0].client_id)?;
    let k = ordered.len() as f64;
    let mut out = Vec::with_capacity(state.global.len());
    for (i, g) in state.global.iter().enumerate() {
        if g.kind == TensorKind::Buffer {
            out.push(NamedTensor::new(g.name.clone(), g.kind, weighted_mean(&ordered, i)));
            continue;
        }
        let w = g.tensor.data();
        let mut next = Vec::with_capacity(w.len());
        for j in 0..w.len() {
            let delta = ordered.iter().map(|u| u.shared[i].tensor.data()[j] - w[j]).fold(0.0, |a, d| a + d) / k;
            let m = beta1 * state.m[i][j] + (1.0 - beta1) * delta;
            let v = beta2 * state.v[i][j] + (1.0 - beta2) * delta * delta;
            state.m[i][j] = m;
            state.v[i][j] = v;
            next.push(w[j] + server_lr * m / (v.sqrt() + epsilon));
        }
        out.push(NamedTensor::new(g.name.clone(), g.kind, Tensor::new(g.tensor.shape().to_vec(), next)?));
    }
    Ok(out)
}
