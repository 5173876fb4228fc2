//! Round orchestration over simulated clients.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::aggregate::{AggregatorKind, AggregatorState, ClientUpdate};
use crate::fed::channel::{Channel, Message};
use crate::fed::handshake::{handshake, FeatureAvailabilityVector, Handshake};
use crate::nn::{NamedTensor, SeededRng};
use crate::tensor::Tensor;

/// One client's model inputs: shared-feature columns, optional local-feature columns, class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub shared: Tensor,
    pub local: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl ClientData {
    pub fn new(shared: Tensor, local: Option<Tensor>, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        if shared.shape().len() != 2
            || shared.rows() != n
            || local.as_ref().is_some_and(|l| l.shape().len() != 2 || l.rows() != n)
        {
            return Err(Error::Shape(format!("client data with {n} labels but feature blocks of different height")));
        }
        Ok(Self { shared, local, labels })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn shared_dim(&self) -> usize {
        self.shared.row_width()
    }

    pub fn local_dim(&self) -> usize {
        self.local.as_ref().map_or(0, Tensor::row_width)
    }

    pub fn subset(&self, rows: &[usize]) -> ClientData {
        ClientData {
            shared: self.shared.select_rows(rows),
            local: self.local.as_ref().map(|l| l.select_rows(rows)),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// FedProx coefficient on the shared parameters; zero disables the proximal term.
    pub proximal_mu: f64,
}

/// A client-side model as seen by the federation loop.
pub trait ClientModel: Send {
    /// Server-shareable tensors, in a fixed order with stable names.
    fn shared_state(&self) -> Vec<NamedTensor>;
    /// Tensors that never leave the client.
    fn private_state(&self) -> Vec<NamedTensor>;
    /// Installs a server broadcast.
    fn receive_global(&mut self, global: &[NamedTensor]) -> Result<()>;
    /// Local training for one round; returns the mean training loss.
    fn train_round(&mut self, data: &ClientData, opts: &LocalTraining, rng: &mut SeededRng) -> Result<f64>;
    /// Tensors sent to the server after `train_round`.
    fn upload_state(&self) -> Vec<NamedTensor> {
        self.shared_state()
    }
    /// Class probabilities of the personalized model, `[n, C]`.
    fn predict_proba(&mut self, data: &ClientData) -> Result<Tensor>;
}

pub struct Client {
    pub id: String,
    pub data: ClientData,
    pub model: Box<dyn ClientModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub local_epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub aggregator: AggregatorKind,
    pub seed: u64,
    /// Fraction of clients sampled per round; 1.0 is full participation.
    pub participation: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            local_epochs: 10,
            rounds: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            aggregator: AggregatorKind::FedAvg,
            seed: 0,
            participation: 1.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("fed.epochs must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("fed.rounds must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("fed.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("fed.lr must be positive, got {}", self.learning_rate)));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!("fed.participation must lie in (0, 1], got {}", self.participation)));
        }
        self.aggregator.validate()
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            proximal_mu: self.aggregator.proximal_mu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub round: usize,
    pub client: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    /// Global shared tensors after each round; entry 0 is the initial broadcast.
    pub global_by_round: Vec<Vec<NamedTensor>>,
    pub history: Vec<HistoryRecord>,
}

impl FederationOutcome {
    pub fn final_global(&self) -> &[NamedTensor] {
        self.global_by_round.last().expect("initial state is always recorded")
    }
}

/// Mixes a base seed with a path of integers into an independent stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Clients send their availability masks; the server computes the shared feature set.
pub fn exchange_masks(channel: &mut Channel, vectors: &[FeatureAvailabilityVector]) -> Result<Handshake> {
    for v in vectors {
        channel.send(&Message::Mask(v.clone()));
    }
    let mut received = Vec::with_capacity(vectors.len());
    for _ in vectors {
        match channel.recv()? {
            Some(Message::Mask(v)) => received.push(v),
            other => return Err(Error::Schema(format!("expected an availability mask, got {other:?}"))),
        }
    }
    handshake(&received)
}

fn broadcast(channel: &mut Channel, round: usize, global: &[NamedTensor], clients: &mut [Client]) -> Result<()> {
    channel.send(&Message::Broadcast { round: round as u32, tensors: global.to_vec() });
    let Some(Message::Broadcast { tensors, .. }) = channel.recv()? else {
        return Err(Error::Schema("expected a broadcast frame".into()));
    };
    clients.iter_mut().try_for_each(|c| c.model.receive_global(&tensors))
}

/// Runs `cfg.rounds` rounds. The initial global state is the shared state of the client
/// with the smallest id. After each round's broadcast, `on_round(round, clients)` is called,
/// so a caller can evaluate intermediate rounds without affecting the trajectory.
pub fn run_federation(
    cfg: &RunConfig,
    clients: &mut [Client],
    channel: &mut Channel,
    mut on_round: impl FnMut(usize, &mut [Client]) -> Result<()>,
) -> Result<FederationOutcome> {
    if clients.is_empty() {
        return Err(Error::Config("federation needs at least one client".into()));
    }
    clients.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(c) = clients.iter().find(|c| c.data.n_rows() == 0) {
        return Err(Error::Degenerate(format!("client `{}` has no training rows", c.id)));
    }
    let initial = clients[0].model.shared_state();
    let mut state = AggregatorState::new(cfg.aggregator, initial.clone())?;
    let mut outcome = FederationOutcome { global_by_round: vec![initial], history: Vec::new() };
    broadcast(channel, 0, &state.global, clients)?;
    let opts = cfg.local_training();
    let k = clients.len();
    for round in 1..=cfg.rounds {
        let take = ((cfg.participation * k as f64).ceil() as usize).clamp(1, k);
        let mut chosen: Vec<usize> = if take == k {
            (0..k).collect()
        } else {
            let mut rng = SeededRng::seed_from_u64(derive_seed(cfg.seed, &[round as u64, u64::MAX]));
            sample(&mut rng, k, take).into_vec()
        };
        chosen.sort_unstable();
        let results: Vec<Result<(usize, f64)>> = clients
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| chosen.binary_search(i).is_ok())
            .map(|(i, c)| {
                let mut rng = SeededRng::seed_from_u64(derive_seed(cfg.seed, &[round as u64, i as u64]));
                let loss = c.model.train_round(&c.data, &opts, &mut rng)?;
                Ok((i, loss))
            })
            .collect();
        let mut updates = Vec::with_capacity(chosen.len());
        for r in results {
            let (i, loss) = r?;
            let c = &clients[i];
            outcome.history.push(HistoryRecord { round, client: c.id.clone(), loss });
            let update = ClientUpdate { client_id: c.id.clone(), shared: c.model.upload_state(), n_k: c.data.n_rows() };
            channel.send(&Message::Upload { round: round as u32, update });
        }
        for _ in &chosen {
            match channel.recv()? {
                Some(Message::Upload { update, .. }) => updates.push(update),
                other => return Err(Error::Schema(format!("expected a client upload, got {other:?}"))),
            }
        }
        state.aggregate(&updates)?;
        broadcast(channel, round, &state.global, clients)?;
        outcome.global_by_round.push(state.global.clone());
        on_round(round, clients)?;
    }
    Ok(outcome)
}

pub fn write_history_csv<W: Write>(writer: W, history: &[HistoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for h in history {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(reader: R) -> Result<Vec<HistoryRecord>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(1, &[2, 3]);
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
        assert_eq!(a, derive_seed(1, &[2, 3]));
    }

    #[test]
    fn zero_rounds_are_rejected_by_config() {
        let cfg = RunConfig { rounds: 0, ..RunConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("fed.rounds"));
    }
}
