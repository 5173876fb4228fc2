//! Federation state machine: availability handshake, simulated channel, aggregators and the round loop.

pub mod aggregate;
pub mod channel;
pub mod handshake;
pub mod runtime;

pub use aggregate::{
    add_proximal_gradient, aggregate_fedadam, aggregate_fedavg, fedprox_local_objective, AggregatorKind,
    AggregatorState, ClientUpdate,
};
pub use channel::{Channel, Message};
pub use handshake::{handshake, FeatureAvailabilityVector, Handshake, SharedFeatureSet};
pub use runtime::{
    derive_seed, exchange_masks, read_history_csv, run_federation, write_history_csv, Client, ClientData, ClientModel,
    FederationOutcome, HistoryRecord, LocalTraining, RunConfig,
};
