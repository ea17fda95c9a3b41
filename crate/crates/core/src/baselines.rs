//! Reference unlearning methods: retraining without the forgotten data and
//! fine-tuning on randomly relabelled forgetting data.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gather_features, relabel_away, ClientDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::federation::{run_federation, FederationConfig};
use crate::nn::{self, Model, SgdConfig, TrainableMask};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub model: Model,
    pub wall_time_s: f64,
    pub rounds: usize,
}

/// Serializable summary of a [`BaselineResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub wall_time_s: f64,
    pub rounds: usize,
}

impl BaselineResult {
    pub fn summary(&self) -> BaselineSummary {
        BaselineSummary {
            wall_time_s: self.wall_time_s,
            rounds: self.rounds,
        }
    }
}

/// Plain FedAvg from `initial` over every client's remaining data. Clients
/// with nothing left are left out of the federation.
pub fn retrain_from_scratch(
    config: &FederationConfig,
    initial: Model,
    clients: &[ClientDataset],
) -> Result<BaselineResult> {
    let start = Instant::now();
    let mut kept = Vec::with_capacity(clients.len());
    for c in clients {
        match c.without_unlearning() {
            Some(rest) => kept.push(rest),
            None => log::warn!(
                "client {} has no remaining data and is excluded from retraining",
                c.client_id
            ),
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty("no client has remaining data to retrain on".into()));
    }
    let mut cfg = config.clone();
    cfg.client_count = kept.len();
    let artifacts = run_federation(&cfg, initial, &kept, None)?;
    if artifacts.flagged_examples_trained != 0 {
        return Err(Error::Precondition(format!(
            "retraining touched {} unlearning examples",
            artifacts.flagged_examples_trained
        )));
    }
    Ok(BaselineResult {
        model: artifacts.model,
        wall_time_s: start.elapsed().as_secs_f64(),
        rounds: cfg.rounds,
    })
}

/// Whole-model SGD on the forgetting data, each example relabelled once to a
/// uniformly drawn wrong class.
pub fn random_label_finetune(
    model: &Model,
    unlearning: &[LabeledExample],
    epochs: usize,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<BaselineResult> {
    if unlearning.is_empty() {
        return Err(Error::Empty("random-label fine-tuning needs unlearning data".into()));
    }
    sgd.validate()?;
    let start = Instant::now();
    let classes = model.class_count();
    let mut relabel = rng::stream(seed, Purpose::Finetune, 0, 0);
    let data: Vec<LabeledExample> = unlearning
        .iter()
        .map(|e| LabeledExample {
            trained_label: relabel_away(&mut relabel, e.trained_label, classes),
            ..e.clone()
        })
        .collect();
    let dim = model.input_dim();
    let mut out = model.clone();
    for epoch in 0..epochs {
        let mut r = rng::stream(seed, Purpose::Finetune, 1, epoch as u64);
        let order = rng::permutation(&mut r, data.len());
        for batch in order.chunks(sgd.batch_size) {
            let refs: Vec<&LabeledExample> = batch.iter().map(|&i| &data[i]).collect();
            let x = gather_features(&refs, dim)?;
            let y: Vec<usize> = refs.iter().map(|e| e.trained_label).collect();
            nn::step_in_place(&mut out, &x, batch.len(), &y, sgd, TrainableMask::ALL)?;
        }
    }
    Ok(BaselineResult {
        model: out,
        wall_time_s: start.elapsed().as_secs_f64(),
        rounds: epochs,
    })
}
