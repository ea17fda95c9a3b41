//! FedAvg with interleaved auxiliary-head training.
//!
//! Each round every client starts from the global `(E, W_l)`, runs local
//! SGD, and uploads; the server averages. From `aux_start_round` on, every
//! unlearning client also trains its auxiliary head `W_a` on the relabelled
//! dataset `D'`, head only, on top of its freshly updated local extractor.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_aux_dataset_class, build_aux_dataset_sample, gather_features, ClientDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::nn::{self, LabelSource, Model, SgdConfig, Stack, TrainableMask};
use crate::rng::{self, Purpose};
use crate::unlearning::{self, AuxHeads, Coefficients};

pub use crate::unlearning::Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxMode {
    /// Every unlearning client keeps its own head.
    Private,
    /// Heads are averaged across unlearning clients after each round.
    Collaborative,
}

/// Starting point of an auxiliary head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxInit {
    /// Copy of the global head at the first auxiliary round.
    GlobalHead,
    /// All-zero head.
    Zero,
}

impl AuxInit {
    /// Class scope subtracts `beta * W_a`, so its head starts from zero;
    /// the other scopes interpolate and start from the global head.
    pub fn default_for(scope: Scope) -> AuxInit {
        match scope {
            Scope::Class => AuxInit::Zero,
            Scope::Samples | Scope::Client => AuxInit::GlobalHead,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearningPlan {
    pub scope: Scope,
    pub clients: BTreeSet<usize>,
    #[serde(default)]
    pub class: Option<usize>,
    #[serde(default = "default_aux_mode")]
    pub aux_mode: AuxMode,
}

fn default_aux_mode() -> AuxMode {
    AuxMode::Private
}

impl UnlearningPlan {
    pub fn samples(clients: impl IntoIterator<Item = usize>) -> Self {
        UnlearningPlan {
            scope: Scope::Samples,
            clients: clients.into_iter().collect(),
            class: None,
            aux_mode: AuxMode::Private,
        }
    }

    pub fn class(clients: impl IntoIterator<Item = usize>, class: usize) -> Self {
        UnlearningPlan {
            scope: Scope::Class,
            clients: clients.into_iter().collect(),
            class: Some(class),
            aux_mode: AuxMode::Private,
        }
    }

    pub fn client(clients: impl IntoIterator<Item = usize>) -> Self {
        UnlearningPlan {
            scope: Scope::Client,
            clients: clients.into_iter().collect(),
            class: None,
            aux_mode: AuxMode::Private,
        }
    }

    pub fn validate(&self, classes: usize, client_count: usize) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::InvalidParameter("unlearning plan names no clients".into()));
        }
        if let Some(&k) = self.clients.iter().find(|&&k| k >= client_count) {
            return Err(Error::InvalidParameter(format!(
                "unlearning client {k} does not exist ({client_count} clients)"
            )));
        }
        match (self.scope, self.class) {
            (Scope::Class, None) => Err(Error::InvalidParameter("class scope needs a class".into())),
            (Scope::Class, Some(c)) if c >= classes => Err(Error::LabelOutOfRange { label: c, classes }),
            (Scope::Samples | Scope::Client, Some(_)) => {
                Err(Error::InvalidParameter(format!("{} scope takes no class", self.scope)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub client_count: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default)]
    pub sgd: SgdConfig,
    /// First round (1-based) with auxiliary training; past `rounds` disables it.
    pub aux_start_round: usize,
    #[serde(default = "one")]
    pub aux_epochs_per_round: usize,
    pub seed: u64,
    /// Client-scope pull of the auxiliary head toward the global head.
    #[serde(default = "default_client_mix")]
    pub client_mix: f32,
    /// Weight clients by sample count instead of uniformly.
    #[serde(default)]
    pub sample_weighted: bool,
    #[serde(default)]
    pub aux_init: Option<AuxInit>,
}

fn one() -> usize {
    1
}

fn default_client_mix() -> f32 {
    0.3
}

impl FederationConfig {
    pub fn new(client_count: usize, rounds: usize, seed: u64) -> Self {
        FederationConfig {
            client_count,
            rounds,
            local_epochs: 1,
            sgd: SgdConfig::default(),
            aux_start_round: rounds.saturating_sub(10).max(1),
            aux_epochs_per_round: 1,
            seed,
            client_mix: default_client_mix(),
            sample_weighted: false,
            aux_init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.client_count == 0 {
            return Err(Error::InvalidParameter("federation needs at least one client".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be positive".into()));
        }
        if self.aux_start_round == 0 {
            return Err(Error::InvalidParameter("aux_start_round is 1-based".into()));
        }
        if !(0.0..=1.0).contains(&self.client_mix) {
            return Err(Error::InvalidParameter(format!(
                "client_mix must be in [0,1], got {}",
                self.client_mix
            )));
        }
        self.sgd.validate()
    }

    pub fn aux_rounds(&self) -> usize {
        (self.rounds + 1).saturating_sub(self.aux_start_round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_acc: Option<f64>,
    pub client_losses: Vec<f32>,
    /// Accuracy of the auxiliary modules alone (global extractor, each
    /// client's auxiliary head) on their clients' `D^u`, as-trained labels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_ul_acc: Option<f64>,
    /// Ul-Acc of the model unlearned with the monitor coefficients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unlearned_ul_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArtifacts {
    /// Global extractor and learned head `W_l`.
    pub model: Model,
    pub aux: AuxHeads,
    pub rounds: Vec<RoundRecord>,
    /// Examples flagged as unlearning data that went through local training.
    pub flagged_examples_trained: u64,
}

impl TrainedArtifacts {
    pub fn learned_head(&self) -> &Stack {
        self.model.head()
    }
}

/// Optional per-round evaluation.
#[derive(Debug, Clone, Default)]
pub struct Monitor<'a> {
    pub test_set: Option<&'a [LabeledExample]>,
    pub coefficients: Option<Coefficients>,
}

/// Local SGD from a copy of the global model. Returns the updated local
/// model and its mean batch loss (0 when no step ran).
pub fn local_train(
    client: &ClientDataset,
    global: &Model,
    config: &FederationConfig,
    round: usize,
) -> Result<(Model, f32)> {
    if client.is_empty() {
        return Err(Error::Empty(format!("client {} has no data", client.client_id)));
    }
    let mut local = global.clone();
    let mut losses = Vec::new();
    for epoch in 0..config.local_epochs {
        let mut r = rng::stream(
            config.seed,
            Purpose::LocalShuffle,
            client.client_id as u64,
            (round as u64) << 16 | epoch as u64,
        );
        let order = rng::permutation(&mut r, client.len());
        losses.extend(run_epoch(
            &mut local,
            &client.examples,
            &order,
            &config.sgd,
            TrainableMask::ALL,
        )?);
    }
    let mean = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f32>() / losses.len() as f32
    };
    Ok((local, mean))
}

fn run_epoch(
    model: &mut Model,
    examples: &[LabeledExample],
    order: &[usize],
    sgd: &SgdConfig,
    mask: TrainableMask,
) -> Result<Vec<f32>> {
    let dim = model.input_dim();
    let mut losses = Vec::new();
    for batch in order.chunks(sgd.batch_size) {
        let refs: Vec<&LabeledExample> = batch.iter().map(|&i| &examples[i]).collect();
        let x = gather_features(&refs, dim)?;
        let y: Vec<usize> = refs.iter().map(|e| e.trained_label).collect();
        losses.push(nn::step_in_place(model, &x, batch.len(), &y, sgd, mask)?);
    }
    Ok(losses)
}

/// Unweighted per-parameter mean of model pieces.
pub fn fedavg_aggregate(parts: &[&Stack]) -> Result<Stack> {
    Stack::mean(parts)
}

/// Per-parameter mean weighted by client sample counts.
pub fn fedavg_aggregate_weighted(parts: &[&Stack], sizes: &[usize]) -> Result<Stack> {
    let w: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    Stack::weighted_mean(parts, &w)
}

/// Features of `D'` under a frozen extractor, as a dataset a bare head can train on.
fn featurize(extractor: &Stack, data: &ClientDataset) -> Result<Vec<LabeledExample>> {
    let dim = extractor
        .input_dim()
        .unwrap_or_else(|| data.examples.first().map_or(0, |e| e.features.len()));
    let refs: Vec<&LabeledExample> = data.examples.iter().collect();
    let x = gather_features(&refs, dim)?;
    let feats = extractor.forward_raw(&x, refs.len());
    let width = feats.len() / refs.len().max(1);
    Ok(data
        .examples
        .iter()
        .zip(feats.chunks_exact(width.max(1)))
        .map(|(e, f)| LabeledExample {
            features: f.to_vec(),
            ..e.clone()
        })
        .collect())
}

fn aux_epoch(
    head_model: &mut Model,
    feats: &[LabeledExample],
    config: &FederationConfig,
    client_id: usize,
    round: usize,
    epoch: usize,
) -> Result<()> {
    let mut r = rng::stream(
        config.seed,
        Purpose::AuxShuffle,
        client_id as u64,
        (round as u64) << 16 | epoch as u64,
    );
    let order = rng::permutation(&mut r, feats.len());
    run_epoch(head_model, feats, &order, &config.sgd, TrainableMask::HEAD_ONLY)?;
    Ok(())
}

/// Head-only SGD of an auxiliary head on `D'` for `aux_epochs_per_round`
/// epochs; the extractor is only read.
pub fn train_aux_round(
    client_id: usize,
    extractor: &Stack,
    aux_head: &Stack,
    aux_data: &ClientDataset,
    config: &FederationConfig,
    round: usize,
) -> Result<Stack> {
    if aux_data.is_empty() {
        return Err(Error::Empty(format!(
            "auxiliary dataset of client {client_id} is empty"
        )));
    }
    if config.aux_epochs_per_round == 0 {
        return Ok(aux_head.clone());
    }
    let feats = featurize(extractor, aux_data)?;
    let mut head_model = Model::new(Stack::empty(), aux_head.clone())?;
    for epoch in 0..config.aux_epochs_per_round {
        aux_epoch(&mut head_model, &feats, config, client_id, round, epoch)?;
    }
    Ok(head_model.into_parts().1)
}

/// Client-scope auxiliary update: after each epoch on `D^u'` the head is
/// pulled toward the global head, `W_a <- (1 - mix) W_a + mix W_l`.
#[allow(clippy::too_many_arguments)]
pub fn client_scope_aux_update(
    client_id: usize,
    extractor: &Stack,
    aux_head: &Stack,
    global_head: &Stack,
    aux_data: &ClientDataset,
    config: &FederationConfig,
    mix: f32,
    round: usize,
) -> Result<Stack> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidParameter(format!("mix must be in [0,1], got {mix}")));
    }
    if aux_data.is_empty() {
        return Err(Error::Empty(format!(
            "auxiliary dataset of client {client_id} is empty"
        )));
    }
    let feats = featurize(extractor, aux_data)?;
    let mut head = aux_head.clone();
    for epoch in 0..config.aux_epochs_per_round {
        let mut head_model = Model::new(Stack::empty(), head)?;
        aux_epoch(&mut head_model, &feats, config, client_id, round, epoch)?;
        let trained = head_model.into_parts().1;
        let mix = mix as f64;
        head = Stack::linear_combine_wide(&[(&trained, 1.0 - mix), (global_head, mix)])?;
    }
    Ok(head)
}

/// Builds `D'` for one unlearning client in one round. Sample-style
/// relabelling is redrawn every round.
pub fn aux_dataset_for(
    plan: &UnlearningPlan,
    client: &ClientDataset,
    classes: usize,
    seed: u64,
    round: usize,
) -> Result<ClientDataset> {
    match plan.scope {
        Scope::Samples | Scope::Client => {
            let key = rng::derive_key(seed, Purpose::AuxRelabel, round as u64, 0);
            build_aux_dataset_sample(client, classes, key)
        }
        Scope::Class => build_aux_dataset_class(client, plan.class.unwrap_or(0)),
    }
}

struct ClientOutcome {
    model: Model,
    loss: f32,
    flagged: u64,
    aux: Option<Stack>,
}

/// Runs `rounds` rounds of FedAvg; with a plan, also trains auxiliary heads.
pub fn run_federation(
    config: &FederationConfig,
    initial: Model,
    clients: &[ClientDataset],
    plan: Option<&UnlearningPlan>,
) -> Result<TrainedArtifacts> {
    run_federation_with(config, initial, clients, plan, &Monitor::default())
}

pub fn run_federation_with(
    config: &FederationConfig,
    initial: Model,
    clients: &[ClientDataset],
    plan: Option<&UnlearningPlan>,
    monitor: &Monitor<'_>,
) -> Result<TrainedArtifacts> {
    config.validate()?;
    if clients.len() != config.client_count {
        return Err(Error::InvalidParameter(format!(
            "config expects {} clients, got {}",
            config.client_count,
            clients.len()
        )));
    }
    let classes = initial.class_count();
    let unlearners: BTreeSet<usize> = match plan {
        Some(p) => {
            p.validate(classes, clients.len())?;
            p.clients.clone()
        }
        None => BTreeSet::new(),
    };
    let by_id = |k: usize| clients.iter().find(|c| c.client_id == k);
    if let Some(p) = plan {
        for &k in &p.clients {
            let client = by_id(k).ok_or_else(|| Error::InvalidParameter(format!("no client with id {k}")))?;
            if client.unlearning_count() == 0 {
                return Err(Error::Precondition(format!(
                    "unlearning client {k} has no unlearning data"
                )));
            }
        }
    }
    let aux_init = plan.map(|p| config.aux_init.unwrap_or_else(|| AuxInit::default_for(p.scope)));
    let unlearning_union: Vec<LabeledExample> = unlearners
        .iter()
        .filter_map(|&k| by_id(k))
        .flat_map(ClientDataset::unlearning)
        .collect();
    let sizes: Vec<usize> = clients.iter().map(ClientDataset::len).collect();

    let mut global = initial;
    let mut aux = AuxHeads::default();
    let mut records = Vec::with_capacity(config.rounds);
    let mut flagged_total = 0u64;

    for round in 1..=config.rounds {
        let aux_active = plan.is_some() && round >= config.aux_start_round;
        if aux_active && aux.is_empty() {
            let start = match aux_init.unwrap() {
                AuxInit::GlobalHead => global.head().clone(),
                AuxInit::Zero => global.head().zeros_like(),
            };
            for &k in &unlearners {
                aux.per_client.insert(k, start.clone());
            }
        }
        let global_ref = &global;
        let aux_ref = &aux;
        let outcomes: Vec<ClientOutcome> = clients
            .par_iter()
            .map(|client| -> Result<ClientOutcome> {
                let (model, loss) = local_train(client, global_ref, config, round)?;
                let flagged =
                    client.examples.iter().filter(|e| e.is_unlearning).count() as u64 * config.local_epochs as u64;
                let mut trained_aux = None;
                if let (true, Some(p)) = (aux_active, plan) {
                    if p.clients.contains(&client.client_id) {
                        let start = match (&aux_ref.aggregated, p.aux_mode) {
                            (Some(agg), AuxMode::Collaborative) => agg,
                            _ => &aux_ref.per_client[&client.client_id],
                        };
                        let data = aux_dataset_for(p, client, classes, config.seed, round)?;
                        let head = if p.scope == Scope::Client {
                            client_scope_aux_update(
                                client.client_id,
                                model.extractor(),
                                start,
                                global_ref.head(),
                                &data,
                                config,
                                config.client_mix,
                                round,
                            )?
                        } else {
                            train_aux_round(client.client_id, model.extractor(), start, &data, config, round)?
                        };
                        trained_aux = Some(head);
                    }
                }
                Ok(ClientOutcome {
                    model,
                    loss,
                    flagged,
                    aux: trained_aux,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round(round))?;

        let extractors: Vec<&Stack> = outcomes.iter().map(|o| o.model.extractor()).collect();
        let heads: Vec<&Stack> = outcomes.iter().map(|o| o.model.head()).collect();
        let (extractor, head) = if config.sample_weighted {
            (
                fedavg_aggregate_weighted(&extractors, &sizes),
                fedavg_aggregate_weighted(&heads, &sizes),
            )
        } else {
            (fedavg_aggregate(&extractors), fedavg_aggregate(&heads))
        };
        global = Model::new(
            extractor.map_err(|e| e.in_round(round))?,
            head.map_err(|e| e.in_round(round))?,
        )?;
        flagged_total += outcomes.iter().map(|o| o.flagged).sum::<u64>();

        for (client, o) in clients.iter().zip(&outcomes) {
            if let Some(h) = &o.aux {
                aux.per_client.insert(client.client_id, h.clone());
            }
        }
        if aux_active && plan.map(|p| p.aux_mode) == Some(AuxMode::Collaborative) {
            let heads: Vec<&Stack> = aux.per_client.values().collect();
            aux.aggregated = Some(fedavg_aggregate(&heads).map_err(|e| e.in_round(round))?);
        }

        let global_acc = match monitor.test_set {
            Some(t) if !t.is_empty() => Some(nn::evaluate_accuracy(&global, t, LabelSource::True)?),
            _ => None,
        };
        let (aux_ul_acc, unlearned_ul_acc) = match (aux_active, plan) {
            (true, Some(p)) if !unlearning_union.is_empty() => {
                let coeffs = monitor.coefficients.clone().unwrap_or_default();
                let head = unlearning::unlearn(p.scope, global.head(), &aux, &coeffs)?;
                let unlearned =
                    nn::evaluate_accuracy(&global.with_head(head)?, &unlearning_union, LabelSource::AsTrained)?;
                (
                    Some(aux_module_accuracy(&global, &aux, clients, &unlearners)?),
                    Some(unlearned),
                )
            }
            _ => (None, None),
        };
        let record = RoundRecord {
            round,
            global_acc,
            client_losses: outcomes.iter().map(|o| o.loss).collect(),
            aux_ul_acc,
            unlearned_ul_acc,
        };
        log::debug!("{}", serde_json::to_string(&record).unwrap_or_default());
        records.push(record);
    }

    Ok(TrainedArtifacts {
        model: global,
        aux,
        rounds: records,
        flagged_examples_trained: flagged_total,
    })
}

fn aux_module_accuracy(
    global: &Model,
    aux: &AuxHeads,
    clients: &[ClientDataset],
    unlearners: &BTreeSet<usize>,
) -> Result<f64> {
    let (mut hits, mut total) = (0.0, 0usize);
    for &k in unlearners {
        let head = match (&aux.aggregated, aux.per_client.get(&k)) {
            (Some(agg), _) => agg,
            (None, Some(h)) => h,
            (None, None) => continue,
        };
        let Some(client) = clients.iter().find(|c| c.client_id == k) else {
            continue;
        };
        let du = client.unlearning();
        let acc = nn::evaluate_accuracy(&global.with_head(head.clone())?, &du, LabelSource::AsTrained)?;
        hits += acc * du.len() as f64;
        total += du.len();
    }
    Ok(if total == 0 { 0.0 } else { hits / total as f64 })
}

/// Appends round records as JSON lines.
pub fn rounds_jsonl(records: &[RoundRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Total number of stored auxiliary-head bytes, one head per unlearning client.
pub fn aux_head_bytes(aux: &AuxHeads) -> usize {
    match (&aux.aggregated, aux.per_client.is_empty()) {
        (Some(a), true) => a.parameter_bytes(),
        _ => aux.per_client.values().map(Stack::parameter_bytes).sum(),
    }
}
