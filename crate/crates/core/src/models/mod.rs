//! Model builders: the feature-aware personalized model in three encoder variants, the
//! FedPer and pFedMe baselines, and pooled centralized baselines.

pub mod centralized;
pub mod fedfap;
pub mod fedper;
pub mod pfedme;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;

pub use centralized::{
    balanced_class_weights, build_centralized, CentralizedKind, Classifier, LogisticRegression, Standardizer,
};
pub use fedfap::{FedFapModel, FedFapProbe, FedFapVariant, FusionInput};
pub use fedper::FedPerModel;
pub use pfedme::{PFedMeConfig, PFedMeModel};

use crate::error::{Error, Result};
use crate::fed::{derive_seed, ClientData, ClientModel};
use crate::nn::{softmax_rows, SeededRng};
use crate::pipeline::N_CLASSES as PIPELINE_CLASSES;
use crate::tensor::Tensor;

pub const N_CLASSES: usize = PIPELINE_CLASSES;
const PREDICT_CHUNK: usize = 4096;

/// Shuffled mini-batches of row indices covering `0..n` once.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Applies `logits` to row chunks and returns the row-wise softmax.
pub(crate) fn predict_in_chunks(
    data: &ClientData,
    mut logits: impl FnMut(&ClientData, &mut SeededRng) -> Result<Tensor>,
) -> Result<Tensor> {
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Shape("prediction on zero rows".into()));
    }
    let mut rng = SeededRng::seed_from_u64(0);
    let mut out = Vec::with_capacity(n * N_CLASSES);
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let rows: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
        let part = data.subset(&rows);
        out.extend_from_slice(softmax_rows(&logits(&part, &mut rng)?).data());
    }
    Tensor::matrix(n, N_CLASSES, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    FedFap(FedFapVariant),
    FedPer,
    PFedMe(PFedMeConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FedFap(_) => "fedfap",
            Method::FedPer => "fedper",
            Method::PFedMe(_) => "pfedme",
        }
    }

    /// Whether the model consumes client-local feature columns.
    pub fn uses_local_features(&self) -> bool {
        matches!(self, Method::FedFap(_))
    }
}

const SHARED_INIT: u64 = 0x5348_4152;
const PRIVATE_INIT: u64 = 0x5052_4956;

/// Builds a client model. Shared parts are initialized from `seed` alone, so every client
/// starts from the same shared weights; private parts also mix in `client_index`.
pub fn build_client_model(
    method: &Method,
    shared_dim: usize,
    local_dim: usize,
    seed: u64,
    client_index: usize,
) -> Result<Box<dyn ClientModel>> {
    let mut shared_rng = SeededRng::seed_from_u64(derive_seed(seed, &[SHARED_INIT]));
    let mut private_rng = SeededRng::seed_from_u64(derive_seed(seed, &[PRIVATE_INIT, client_index as u64]));
    Ok(match *method {
        Method::FedFap(variant) => {
            Box::new(FedFapModel::new(variant, shared_dim, local_dim, &mut shared_rng, &mut private_rng)?)
        }
        Method::FedPer => Box::new(FedPerModel::new(shared_dim, &mut shared_rng, &mut private_rng)?),
        Method::PFedMe(cfg) => Box::new(PFedMeModel::new(shared_dim, cfg, &mut shared_rng)?),
    })
}

/// Tensor names split into server-shareable and client-private sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shareable: BTreeSet<String>,
    pub private: BTreeSet<String>,
}

/// Checks that shared and private tensor names are disjoint, unique and together equal `all`.
pub fn parameter_partition(model: &dyn ClientModel, all: &[String]) -> Result<Partition> {
    let collect = |names: Vec<String>, what: &str| -> Result<BTreeSet<String>> {
        let mut set = BTreeSet::new();
        for n in names {
            if !set.insert(n.clone()) {
                return Err(Error::Schema(format!("{what} tensor `{n}` listed twice")));
            }
        }
        Ok(set)
    };
    let shareable = collect(model.shared_state().into_iter().map(|t| t.name).collect(), "shareable")?;
    let private = collect(model.private_state().into_iter().map(|t| t.name).collect(), "private")?;
    if let Some(n) = shareable.intersection(&private).next() {
        return Err(Error::Schema(format!("tensor `{n}` is both shareable and private")));
    }
    let every = collect(all.to_vec(), "model")?;
    let union: BTreeSet<String> = shareable.union(&private).cloned().collect();
    if union != every {
        let missing: Vec<_> = every.symmetric_difference(&union).collect();
        return Err(Error::Schema(format!("partition does not cover the model exactly: {missing:?}")));
    }
    Ok(Partition { shareable, private })
}
