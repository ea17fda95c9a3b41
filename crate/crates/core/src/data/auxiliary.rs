use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::ClientDataset;

/// Uniform label over `{0..classes} \ {label}`.
pub fn relabel_away(rng: &mut impl RngCore, label: usize, classes: usize) -> usize {
    let r = rng::below(rng, classes - 1);
    if r >= label {
        r + 1
    } else {
        r
    }
}

/// Auxiliary dataset for sample (and client) unlearning: unlearning examples
/// get a fresh label drawn uniformly from the other classes, remaining
/// examples are kept as they are.
pub fn build_aux_dataset_sample(client: &ClientDataset, classes: usize, seed: u64) -> Result<ClientDataset> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "relabelling needs at least 2 classes, got {classes}"
        )));
    }
    if client.unlearning_count() == 0 {
        return Err(Error::Precondition(format!(
            "client {} has no unlearning examples",
            client.client_id
        )));
    }
    let mut r = rng::stream(seed, Purpose::AuxRelabel, client.client_id as u64, 0);
    let mut out = client.clone();
    for ex in out.examples.iter_mut().filter(|e| e.is_unlearning) {
        ex.trained_label = relabel_away(&mut r, ex.trained_label, classes);
    }
    Ok(out)
}

/// Auxiliary dataset for class unlearning: remaining examples are relabelled
/// to the forgotten class `class`; unlearning examples already carry it.
pub fn build_aux_dataset_class(client: &ClientDataset, class: usize) -> Result<ClientDataset> {
    if let Some(bad) = client
        .examples
        .iter()
        .find(|e| e.is_unlearning && e.trained_label != class)
    {
        return Err(Error::Precondition(format!(
            "unlearning example labelled {} in class-{class} request",
            bad.trained_label
        )));
    }
    let mut out = client.clone();
    for ex in out.examples.iter_mut().filter(|e| !e.is_unlearning) {
        ex.trained_label = class;
    }
    Ok(out)
}
