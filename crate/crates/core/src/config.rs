//! Experiment configuration: a flat TOML document with dotted keys.
//!
//! ```toml
//! method = "fedfap"          # fedfap | fedper | pfedme | logreg | cnn1d
//! variant = "feedforward"    # fedfap only: feedforward | attention | cnn1d
//! seed = 0
//! folds = 5
//! sweep = false              # run the five (epochs, rounds) pairs instead of fed.epochs/fed.rounds
//! targets = ["CN"]           # centralized only; default is every country
//!
//! fed.epochs = 10
//! fed.rounds = 50
//! fed.batch_size = 64
//! fed.lr = 0.001
//! fed.aggregator = "fedavg"  # fedavg | fedprox | fedadam
//! fed.mu = 0.01              # fedprox
//! fed.server_lr = 0.001      # fedadam
//! fed.betas = [0.9, 0.999]   # fedadam
//! fed.epsilon = 1e-8         # fedadam
//! fed.participation = 1.0
//!
//! pfedme.lambda = 15.0
//! pfedme.inner_steps = 5
//! pfedme.lr = 0.001
//!
//! preprocess.drop_threshold = 0.8
//! preprocess.knn_k = 5
//! ```
//!
//! Every key is optional and defaults to the value shown. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{AggregatorKind, RunConfig};
use crate::models::{CentralizedKind, FedFapVariant, Method, PFedMeConfig};
use crate::pipeline::PreprocessConfig;

/// The (local epochs, rounds) grid run in sweep mode.
pub const SWEEP_GRID: [(usize, usize); 5] = [(5, 5), (5, 10), (10, 10), (10, 20), (10, 50)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawFed {
    epochs: usize,
    rounds: usize,
    batch_size: usize,
    lr: f64,
    aggregator: String,
    mu: f64,
    server_lr: f64,
    betas: [f64; 2],
    epsilon: f64,
    participation: f64,
}

impl Default for RawFed {
    fn default() -> Self {
        Self {
            epochs: 10,
            rounds: 50,
            batch_size: 64,
            lr: 1e-3,
            aggregator: "fedavg".into(),
            mu: crate::fed::aggregate::DEFAULT_PROX_MU,
            server_lr: 1e-3,
            betas: [0.9, 0.999],
            epsilon: 1e-8,
            participation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPFedMe {
    lambda: f64,
    inner_steps: usize,
    lr: f64,
}

impl Default for RawPFedMe {
    fn default() -> Self {
        let d = PFedMeConfig::default();
        Self { lambda: d.lambda, inner_steps: d.inner_steps, lr: d.personal_lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPreprocess {
    drop_threshold: f64,
    knn_k: usize,
}

impl Default for RawPreprocess {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self { drop_threshold: d.drop_threshold, knn_k: d.knn_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    method: String,
    variant: String,
    seed: u64,
    folds: usize,
    sweep: bool,
    targets: Option<Vec<String>>,
    fed: RawFed,
    pfedme: RawPFedMe,
    preprocess: RawPreprocess,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            method: "fedfap".into(),
            variant: "feedforward".into(),
            seed: 0,
            folds: crate::pipeline::DEFAULT_FOLDS,
            sweep: false,
            targets: None,
            fed: RawFed::default(),
            pfedme: RawPFedMe::default(),
            preprocess: RawPreprocess::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Experiment {
    Federated(Method),
    Centralized(CentralizedKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub run: RunConfig,
    pub folds: usize,
    pub sweep: bool,
    pub targets: Option<Vec<String>>,
    pub preprocess: PreprocessConfig,
    raw: RawConfig,
}

fn unknown(key: &str, value: &str, allowed: &str) -> Error {
    Error::Config(format!("{key}: unknown value `{value}` (expected one of {allowed})"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let f = &raw.fed;
        let aggregator = match f.aggregator.as_str() {
            "fedavg" => AggregatorKind::FedAvg,
            "fedprox" => AggregatorKind::FedProx { mu: f.mu },
            "fedadam" => AggregatorKind::FedAdam {
                server_lr: f.server_lr,
                beta1: f.betas[0],
                beta2: f.betas[1],
                epsilon: f.epsilon,
            },
            other => return Err(unknown("fed.aggregator", other, "fedavg, fedprox, fedadam")),
        };
        let run = RunConfig {
            local_epochs: f.epochs,
            rounds: f.rounds,
            batch_size: f.batch_size,
            learning_rate: f.lr,
            aggregator,
            seed: raw.seed,
            participation: f.participation,
        };
        run.validate()?;
        let pfedme =
            PFedMeConfig { lambda: raw.pfedme.lambda, inner_steps: raw.pfedme.inner_steps, personal_lr: raw.pfedme.lr };
        let experiment = match raw.method.as_str() {
            "fedfap" => {
                let variant = FedFapVariant::from_name(&raw.variant)
                    .map_err(|_| unknown("variant", &raw.variant, "feedforward, attention, cnn1d"))?;
                Experiment::Federated(Method::FedFap(variant))
            }
            "fedper" => Experiment::Federated(Method::FedPer),
            "pfedme" => {
                pfedme.validate()?;
                Experiment::Federated(Method::PFedMe(pfedme))
            }
            "logreg" => Experiment::Centralized(CentralizedKind::LogReg),
            "cnn1d" => Experiment::Centralized(CentralizedKind::Cnn1d),
            other => return Err(unknown("method", other, "fedfap, fedper, pfedme, logreg, cnn1d")),
        };
        if raw.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", raw.folds)));
        }
        let preprocess =
            PreprocessConfig { drop_threshold: raw.preprocess.drop_threshold, knn_k: raw.preprocess.knn_k };
        preprocess.validate()?;
        Ok(Self { experiment, run, folds: raw.folds, sweep: raw.sweep, targets: raw.targets.clone(), preprocess, raw })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self.raw.seed = seed;
        self
    }

    /// The resolved configuration, as echoed into reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.raw).expect("plain data serializes")
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.raw).expect("plain data serializes")
    }

    pub fn method_label(&self) -> &str {
        &self.raw.method
    }
}
