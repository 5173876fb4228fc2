//! Evaluation protocols: participant-grouped cross-validation of a federation, and the
//! pooled centralized protocol on the shared feature set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fed::{
    derive_seed, exchange_masks, run_federation, Channel, Client, ClientData, FeatureAvailabilityVector, Handshake,
    HistoryRecord, RunConfig,
};
use crate::metrics::report::{CountryMetrics, FoldMetrics, MetricsReport, ReportHeader};
use crate::models::{build_centralized, build_client_model, CentralizedKind, Method, Standardizer};
use crate::pipeline::{ClientDataset, FoldPlan};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Folds to run; `None` runs every fold of the plans.
    pub folds: Option<Vec<usize>>,
    /// Rounds at which to score the personalized models; empty means only the last round.
    pub report_rounds: Vec<usize>,
    /// Copied into each report.
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldHistory {
    pub fold: usize,
    pub record: HistoryRecord,
}

#[derive(Debug, Clone)]
pub struct FederatedEvaluation {
    /// One report per entry of the requested rounds, ascending.
    pub reports: Vec<(usize, MetricsReport)>,
    pub history: Vec<FoldHistory>,
    pub handshake: Handshake,
    /// Bytes that crossed the simulated channel, summed over folds.
    pub channel_bytes: u64,
}

fn check_inputs(clients: &[ClientDataset], plans: &[FoldPlan]) -> Result<usize> {
    if clients.is_empty() || clients.len() != plans.len() {
        return Err(Error::Config(format!("{} clients but {} fold plans", clients.len(), plans.len())));
    }
    let n_folds = plans[0].n_folds;
    if plans.iter().any(|p| p.n_folds != n_folds) {
        return Err(Error::Config("fold plans disagree on the number of folds".into()));
    }
    Ok(n_folds)
}

fn selected_folds(opts: &EvalOptions, n_folds: usize) -> Result<Vec<usize>> {
    let folds = opts.folds.clone().unwrap_or_else(|| (0..n_folds).collect());
    if let Some(&bad) = folds.iter().find(|&&f| f >= n_folds) {
        return Err(Error::Config(format!("fold {bad} requested but plans have {n_folds}")));
    }
    Ok(folds)
}

fn availability(clients: &[ClientDataset]) -> Result<Vec<FeatureAvailabilityVector>> {
    clients.iter().map(|c| FeatureAvailabilityVector::new(c.country_code.clone(), c.availability_mask())).collect()
}

/// Train/test row indices of one client for one fold; both sides must be non-empty.
pub fn fold_rows(client: &ClientDataset, plan: &FoldPlan, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (train, test) = plan.split(&client.participant_ids, fold)?;
    if test.is_empty() {
        return Err(Error::Degenerate(format!("fold {fold} has no test rows for client `{}`", client.country_code)));
    }
    if train.is_empty() {
        return Err(Error::Degenerate(format!(
            "fold {fold} leaves no training rows for client `{}`",
            client.country_code
        )));
    }
    Ok((train, test))
}

/// Standardized `(train, test)` blocks of the given registry columns, scaled by training-row statistics.
fn standardized_pair(ds: &ClientDataset, train: &[usize], test: &[usize], cols: &[usize]) -> Result<(Tensor, Tensor)> {
    let a = ds.select(train, cols)?;
    let b = ds.select(test, cols)?;
    let st = Standardizer::fit(&a);
    Ok((st.apply(&a), st.apply(&b)))
}

struct FoldOutcome {
    per_round: Vec<Vec<(String, FoldMetrics)>>,
    history: Vec<HistoryRecord>,
    handshake: Handshake,
    bytes: u64,
}

fn federated_fold(
    cfg: &RunConfig,
    method: &Method,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
    fold: usize,
    report_rounds: &[usize],
) -> Result<FoldOutcome> {
    let mut channel = Channel::new();
    let handshake = exchange_masks(&mut channel, &availability(clients)?)?;
    let shared_cols = &handshake.shared.0;
    let fold_seed = derive_seed(cfg.seed, &[fold as u64]);
    let mut fed_clients = Vec::with_capacity(clients.len());
    let mut tests: BTreeMap<String, ClientData> = BTreeMap::new();
    for (i, (ds, plan)) in clients.iter().zip(plans).enumerate() {
        let (train, test) = fold_rows(ds, plan, fold)?;
        let (xs_train, xs_test) = standardized_pair(ds, &train, &test, shared_cols)?;
        let local_cols = handshake.local_for(&ds.country_code).unwrap_or(&[]);
        let (xl_train, xl_test) = if method.uses_local_features() && !local_cols.is_empty() {
            let (a, b) = standardized_pair(ds, &train, &test, local_cols)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let train_data = ClientData::new(xs_train, xl_train, ds.labels(&train))?;
        let test_data = ClientData::new(xs_test, xl_test, ds.labels(&test))?;
        let model = build_client_model(method, train_data.shared_dim(), train_data.local_dim(), fold_seed, i)?;
        tests.insert(ds.country_code.clone(), test_data);
        fed_clients.push(Client { id: ds.country_code.clone(), data: train_data, model });
    }
    let fold_cfg = RunConfig { seed: fold_seed, ..*cfg };
    let mut per_round = Vec::with_capacity(report_rounds.len());
    let outcome = run_federation(&fold_cfg, &mut fed_clients, &mut channel, |round, cs| {
        if report_rounds.contains(&round) {
            let mut scores = Vec::with_capacity(cs.len());
            for c in cs.iter_mut() {
                let test = &tests[&c.id];
                let probs = c.model.predict_proba(test)?;
                scores.push((c.id.clone(), FoldMetrics::compute(fold, &probs, &test.labels)?));
            }
            per_round.push(scores);
        }
        Ok(())
    })?;
    Ok(FoldOutcome { per_round, history: outcome.history, handshake, bytes: channel.bytes_sent() })
}

fn header_for(cfg: &RunConfig, method: &Method, rounds: usize, opts: &EvalOptions) -> ReportHeader {
    ReportHeader {
        method: method.name().to_string(),
        variant: match method {
            Method::FedFap(v) => Some(v.name().to_string()),
            _ => None,
        },
        aggregator: Some(cfg.aggregator.name().to_string()),
        seed: cfg.seed,
        local_epochs: Some(cfg.local_epochs),
        rounds: Some(rounds),
        config: opts.config_echo.clone(),
    }
}

/// Cross-validated federation: for each fold, every client trains on its out-of-fold rows
/// and its personalized model is scored on its fold rows. Folds run in parallel.
pub fn evaluate_federated_with(
    cfg: &RunConfig,
    method: &Method,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
    opts: &EvalOptions,
) -> Result<FederatedEvaluation> {
    cfg.validate()?;
    let n_folds = check_inputs(clients, plans)?;
    let folds = selected_folds(opts, n_folds)?;
    let mut rounds = if opts.report_rounds.is_empty() { vec![cfg.rounds] } else { opts.report_rounds.clone() };
    rounds.sort_unstable();
    rounds.dedup();
    if let Some(&bad) = rounds.iter().find(|&&r| r == 0 || r > cfg.rounds) {
        return Err(Error::Config(format!("report round {bad} outside 1..={}", cfg.rounds)));
    }
    let outcomes: Vec<Result<FoldOutcome>> =
        folds.par_iter().map(|&f| federated_fold(cfg, method, clients, plans, f, &rounds)).collect();
    let outcomes: Vec<FoldOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let mut reports = Vec::with_capacity(rounds.len());
    for (ri, &round) in rounds.iter().enumerate() {
        let mut by_country: BTreeMap<String, Vec<FoldMetrics>> = BTreeMap::new();
        for o in &outcomes {
            for (id, m) in &o.per_round[ri] {
                by_country.entry(id.clone()).or_default().push(m.clone());
            }
        }
        let countries =
            by_country.into_iter().map(|(c, f)| CountryMetrics::from_folds(&c, f)).collect::<Result<_>>()?;
        reports.push((round, MetricsReport::assemble(header_for(cfg, method, round, opts), countries)?));
    }
    let history = folds
        .iter()
        .zip(&outcomes)
        .flat_map(|(&fold, o)| o.history.iter().map(move |r| FoldHistory { fold, record: r.clone() }))
        .collect();
    let channel_bytes = outcomes.iter().map(|o| o.bytes).sum();
    let handshake = outcomes.into_iter().next().expect("at least one fold").handshake;
    Ok(FederatedEvaluation { reports, history, handshake, channel_bytes })
}

pub fn evaluate_federated(
    cfg: &RunConfig,
    method: &Method,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
) -> Result<MetricsReport> {
    let eval = evaluate_federated_with(cfg, method, clients, plans, &EvalOptions::default())?;
    Ok(eval.reports.into_iter().next_back().expect("one report per requested round").1)
}

/// Pooled training set for one target country and fold.
#[derive(Debug, Clone)]
pub struct CentralizedSplit {
    /// Registry indices used as columns: the shared feature set of all clients.
    pub features: Vec<usize>,
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
}

/// Training rows are the target's out-of-fold rows plus every row of the other countries.
pub fn centralized_split(
    target: &str,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
    fold: usize,
) -> Result<CentralizedSplit> {
    check_inputs(clients, plans)?;
    let ti = clients
        .iter()
        .position(|c| c.country_code == target)
        .ok_or_else(|| Error::Unknown { kind: "country", name: target.to_string() })?;
    let mut channel = Channel::new();
    let features = exchange_masks(&mut channel, &availability(clients)?)?.shared.0;
    let (train, test) = fold_rows(&clients[ti], &plans[ti], fold)?;
    let mut blocks = Vec::new();
    let mut train_y = Vec::new();
    for (i, c) in clients.iter().enumerate() {
        let rows: Vec<usize> = if i == ti { train.clone() } else { (0..c.n_rows()).collect() };
        blocks.push(c.select(&rows, &features)?);
        train_y.extend(c.labels(&rows));
    }
    let width = features.len();
    let data: Vec<f64> = blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
    Ok(CentralizedSplit {
        train_x: Tensor::matrix(train_y.len(), width, data)?,
        train_y,
        test_x: clients[ti].select(&test, &features)?,
        test_y: clients[ti].labels(&test),
        features,
    })
}

/// Centralized baseline scored per target country (every country when `targets` is `None`).
pub fn evaluate_centralized(
    kind: CentralizedKind,
    targets: Option<&[String]>,
    clients: &[ClientDataset],
    plans: &[FoldPlan],
    seed: u64,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let n_folds = check_inputs(clients, plans)?;
    let folds = selected_folds(opts, n_folds)?;
    let targets: Vec<String> = match targets {
        Some(t) => t.to_vec(),
        None => clients.iter().map(|c| c.country_code.clone()).collect(),
    };
    let jobs: Vec<(String, usize)> = targets.iter().flat_map(|t| folds.iter().map(move |&f| (t.clone(), f))).collect();
    let results: Vec<Result<(String, FoldMetrics)>> = jobs
        .par_iter()
        .map(|(target, fold)| {
            let split = centralized_split(target, clients, plans, *fold)?;
            let mut model = build_centralized(kind, derive_seed(seed, &[*fold as u64]));
            model.fit(&split.train_x, &split.train_y)?;
            let probs = model.predict_proba(&split.test_x)?;
            Ok((target.clone(), FoldMetrics::compute(*fold, &probs, &split.test_y)?))
        })
        .collect();
    let mut by_country: BTreeMap<String, Vec<FoldMetrics>> = BTreeMap::new();
    for r in results {
        let (c, m) = r?;
        by_country.entry(c).or_default().push(m);
    }
    let countries = by_country.into_iter().map(|(c, f)| CountryMetrics::from_folds(&c, f)).collect::<Result<_>>()?;
    let header = ReportHeader {
        method: kind.name().to_string(),
        variant: None,
        aggregator: None,
        seed,
        local_epochs: None,
        rounds: None,
        config: opts.config_echo.clone(),
    };
    MetricsReport::assemble(header, countries)
}
