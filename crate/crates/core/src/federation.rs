//! Round-based federation: local training, posterior estimation, aggregation,
//! mask selection and merge.
//!
//! Every method shares one merge path. FedAvg merges with an all-zero mask,
//! FedPer and LG-FedAvg with a fixed layer mask, and FedBPS with a mask
//! recomputed each round from the aggregated posterior variances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, default_weights, weighted_mean, ClientWeight};
use crate::config::FederationConfig;
use crate::data::{Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::laplace::{estimate_curvature, posterior_from_curvature, DiagCurvature, DiagGaussian};
use crate::masking::{layer_mask, merge, select_mask, Mask};
use crate::nn::{build_network, evaluate, loss_and_grad, sgd_step, NetworkSpec, SgdConfig};
use crate::tensor::{LayerTag, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedper")]
    FedPer,
    #[serde(rename = "lg-fedavg")]
    LgFedAvg,
    #[serde(rename = "fedbps")]
    FedBps,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FedAvg, Method::FedPer, Method::LgFedAvg, Method::FedBps];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedPer => "fedper",
            Method::LgFedAvg => "lg-fedavg",
            Method::FedBps => "fedbps",
        }
    }

    /// Layer kept local by the layer-level baselines.
    pub fn personalized_tag(self) -> Option<LayerTag> {
        match self {
            Method::FedPer => Some(LayerTag::Classifier),
            Method::LgFedAvg => Some(LayerTag::FeatureExtractor),
            _ => None,
        }
    }
}

/// Local optimization schedule for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl LocalTraining {
    pub fn from_config(cfg: &FederationConfig) -> Self {
        Self {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            sgd: cfg.sgd(),
        }
    }
}

/// Mini-batch shuffling stream of client `id`.
pub fn client_rng(shuffle_seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(id as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub params: ParamSet,
    pub buffers: ParamSet,
    pub train: Dataset,
    pub test: Dataset,
    pub rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(id: usize, params: ParamSet, train: Dataset, test: Dataset, shuffle_seed: u64) -> Self {
        Self {
            id,
            buffers: params.zeros_like(),
            params,
            train,
            test,
            rng: client_rng(shuffle_seed, id),
        }
    }

    pub fn sample_count(&self) -> usize {
        self.train.len()
    }
}

/// Metrics of one server round. Per-client vectors are indexed by client position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: Vec<f64>,
    /// Each client's own model on its own test shard.
    pub test_acc: Vec<f64>,
    /// The round's global model on each client's test shard.
    pub global_test_acc: Vec<f64>,
    /// Fraction of mask bits flipped since the previous round.
    pub mask_churn: Option<f64>,
}

impl RoundRecord {
    pub fn mean_test_acc(&self) -> f64 {
        mean(&self.test_acc)
    }

    pub fn mean_global_test_acc(&self) -> f64 {
        mean(&self.global_test_acc)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `E` epochs of shuffled mini-batch SGD on the client's shard. Momentum
/// buffers start from zero every round. Returns the mean mini-batch loss of
/// the final epoch.
pub fn local_train(state: &mut ClientState, spec: &NetworkSpec, training: &LocalTraining) -> Result<f64> {
    if state.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if training.epochs == 0 || training.batch_size == 0 {
        return Err(Error::config(
            "local_epochs",
            "epochs and batch size must be at least 1",
        ));
    }
    state.buffers = state.params.zeros_like();
    let mut order: Vec<usize> = (0..state.train.len()).collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..training.epochs {
        order.shuffle(&mut state.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(training.batch_size) {
            let batch = state.train.batch_of(chunk)?;
            let (loss, grads) = loss_and_grad(spec, &state.params, &batch)?;
            sgd_step(&mut state.params, &grads, &mut state.buffers, &training.sgd)?;
            total += loss;
            batches += 1;
        }
        last_epoch_loss = total / batches as f64;
    }
    if !state.params.is_finite() {
        return Err(Error::NonFinite(format!("client {} parameters", state.id)));
    }
    Ok(last_epoch_loss)
}

/// Local training followed by curvature of the client's full shard at the
/// trained point. Returns the new parameters, their curvature and the final
/// epoch's training loss.
pub fn client_update(
    state: &mut ClientState,
    spec: &NetworkSpec,
    training: &LocalTraining,
) -> Result<(ParamSet, DiagCurvature, f64)> {
    let loss = local_train(state, spec, training)?;
    let curvature = estimate_curvature(spec, &state.params, &state.train, training.batch_size)?;
    Ok((state.params.clone(), curvature, loss))
}

fn check_clients(clients: &[ClientState], weights: &[ClientWeight]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::config("n_clients", "no clients"));
    }
    if weights.len() != clients.len() {
        return Err(Error::Alignment(format!(
            "{} weights for {} clients",
            weights.len(),
            clients.len()
        )));
    }
    Ok(())
}

/// Merge every client with the global parameters, then evaluate.
fn finish_round(
    clients: &mut [ClientState],
    spec: &NetworkSpec,
    global: &ParamSet,
    mask: &Mask,
    previous_mask: Option<&Mask>,
    round: usize,
    train_loss: Vec<f64>,
) -> Result<RoundRecord> {
    for c in clients.iter_mut() {
        c.params = merge(&c.params, global, mask)?;
    }
    let mut test_acc = Vec::with_capacity(clients.len());
    let mut global_test_acc = Vec::with_capacity(clients.len());
    for c in clients.iter() {
        test_acc.push(evaluate(spec, &c.params, &c.test)?);
        global_test_acc.push(evaluate(spec, global, &c.test)?);
    }
    let mask_churn = previous_mask.map(|p| mask.churn(p)).transpose()?;
    Ok(RoundRecord {
        round,
        train_loss,
        test_acc,
        global_test_acc,
        mask_churn,
    })
}

/// One FedBPS round: client updates, Laplace posteriors, moment-matched
/// aggregation, variance mask, merge.
#[allow(clippy::too_many_arguments)]
pub fn server_round_fedbps(
    clients: &mut [ClientState],
    spec: &NetworkSpec,
    training: &LocalTraining,
    p: f64,
    damping: f64,
    weights: &[ClientWeight],
    previous_mask: Option<&Mask>,
    round: usize,
) -> Result<(RoundRecord, Mask)> {
    check_clients(clients, weights)?;
    let mut updates = Vec::with_capacity(clients.len());
    let mut losses = Vec::with_capacity(clients.len());
    for c in clients.iter_mut() {
        let (params, curvature, loss) = client_update(c, spec, training)?;
        updates.push((params, curvature));
        losses.push(loss);
    }
    let (global, mask) = fedbps_server_step(&updates, p, damping, weights)?;
    let record = finish_round(clients, spec, global.mu(), &mask, previous_mask, round, losses)?;
    Ok((record, mask))
}

/// Server half of a FedBPS round: posteriors from each client's
/// `(params, curvature)`, moment-matched aggregate, and the variance mask.
/// Clients then merge their own parameters with the returned mean.
pub fn fedbps_server_step(
    updates: &[(ParamSet, DiagCurvature)],
    p: f64,
    damping: f64,
    weights: &[ClientWeight],
) -> Result<(DiagGaussian, Mask)> {
    let posteriors = updates
        .iter()
        .map(|(params, curvature)| posterior_from_curvature(params, curvature, damping))
        .collect::<Result<Vec<_>>>()?;
    let global = aggregate(&posteriors, weights)?;
    let mask = select_mask(global.sigma(), p)?;
    Ok((global, mask))
}

/// One round of FedAvg, FedPer or LG-FedAvg.
pub fn server_round_baseline(
    clients: &mut [ClientState],
    spec: &NetworkSpec,
    training: &LocalTraining,
    method: Method,
    weights: &[ClientWeight],
    previous_mask: Option<&Mask>,
    round: usize,
) -> Result<(RoundRecord, Mask)> {
    check_clients(clients, weights)?;
    let mut losses = Vec::with_capacity(clients.len());
    for c in clients.iter_mut() {
        losses.push(local_train(c, spec, training)?);
    }
    let sets: Vec<&ParamSet> = clients.iter().map(|c| &c.params).collect();
    let global = weighted_mean(&sets, weights)?;
    let mask = match method {
        Method::FedAvg => Mask::zeros(global.layout()),
        Method::FedPer | Method::LgFedAvg => layer_mask(&global, method.personalized_tag().unwrap())?,
        Method::FedBps => {
            return Err(Error::config("method", "fedbps is not a baseline"));
        }
    };
    let record = finish_round(clients, spec, &global, &mask, previous_mask, round, losses)?;
    Ok((record, mask))
}

/// Cut client shards out of the full datasets and broadcast one initialization.
pub fn build_clients(
    spec: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    plan: &PartitionPlan,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<Vec<ClientState>> {
    let init = build_network(spec, init_seed)?;
    plan.train
        .iter()
        .zip(&plan.test)
        .enumerate()
        .map(|(id, (tr, te))| {
            Ok(ClientState::new(
                id,
                init.clone(),
                train.subset(tr)?,
                test.subset(te)?,
                shuffle_seed,
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub history: Vec<RoundRecord>,
    pub clients: Vec<ClientState>,
}

impl FederationOutcome {
    /// Mean personalized test accuracy after the last round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().map(RoundRecord::mean_test_acc)
    }

    pub fn final_global_accuracy(&self) -> Option<f64> {
        self.history.last().map(RoundRecord::mean_global_test_acc)
    }
}

/// Run `cfg.rounds` rounds of `cfg.method`, calling `on_round` after each.
pub fn run_federation(
    cfg: &FederationConfig,
    spec: &NetworkSpec,
    mut clients: Vec<ClientState>,
    mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    let counts: Vec<usize> = clients.iter().map(ClientState::sample_count).collect();
    let weights = default_weights(&counts)?;
    for c in &clients[1..] {
        clients[0].params.check_aligned(&c.params)?;
    }
    let training = LocalTraining::from_config(cfg);
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut previous: Option<Mask> = None;
    for round in 1..=cfg.rounds {
        let (record, mask) = match cfg.method {
            Method::FedBps => server_round_fedbps(
                &mut clients,
                spec,
                &training,
                cfg.p,
                cfg.damping,
                &weights,
                previous.as_ref(),
                round,
            )?,
            method => server_round_baseline(
                &mut clients,
                spec,
                &training,
                method,
                &weights,
                previous.as_ref(),
                round,
            )?,
        };
        on_round(&record)?;
        history.push(record);
        previous = Some(mask);
    }
    Ok(FederationOutcome { history, clients })
}
