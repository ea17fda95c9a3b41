use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::{ClientDataset, LabeledExample};

/// Square trigger stamped at the top-left corner of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub patch_value: f32,
    pub target_label: usize,
}

impl Default for BackdoorSpec {
    fn default() -> Self {
        BackdoorSpec {
            patch_rows: 3,
            patch_cols: 3,
            patch_value: 1.0,
            target_label: 0,
        }
    }
}

impl BackdoorSpec {
    pub fn validate(&self, image: (usize, usize), classes: usize) -> Result<()> {
        let (rows, cols) = image;
        if self.patch_rows == 0 || self.patch_cols == 0 || self.patch_rows > rows || self.patch_cols > cols {
            return Err(Error::InvalidParameter(format!(
                "{}x{} patch does not fit a {rows}x{cols} image",
                self.patch_rows, self.patch_cols
            )));
        }
        if !(0.0..=1.0).contains(&self.patch_value) {
            return Err(Error::InvalidParameter(format!(
                "patch value {} outside [0,1]",
                self.patch_value
            )));
        }
        if self.target_label >= classes {
            return Err(Error::LabelOutOfRange {
                label: self.target_label,
                classes,
            });
        }
        Ok(())
    }
}

/// Writes the trigger into a flattened `rows x cols` image.
pub fn stamp(features: &mut [f32], spec: &BackdoorSpec, image: (usize, usize)) {
    let cols = image.1;
    for r in 0..spec.patch_rows {
        for c in 0..spec.patch_cols {
            features[r * cols + c] = spec.patch_value;
        }
    }
}

fn poison(ex: &mut LabeledExample, spec: &BackdoorSpec, image: (usize, usize)) {
    stamp(&mut ex.features, spec, image);
    ex.trained_label = spec.target_label;
    ex.is_unlearning = true;
    ex.backdoored = true;
}

/// Backdoors `floor(proportion * n_k)` examples of a client.
///
/// Candidates are the client's examples whose true label differs from the
/// target (a trigger on a target-class image would be indistinguishable
/// from clean data). The selection is the prefix of a Fisher–Yates
/// permutation of the candidate list drawn from stream
/// `(seed, Backdoor, client_id, 0)`.
pub fn inject_backdoor(
    client: &ClientDataset,
    proportion: f64,
    spec: &BackdoorSpec,
    image: (usize, usize),
    seed: u64,
) -> Result<ClientDataset> {
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "backdoor proportion must be in (0,1), got {proportion}"
        )));
    }
    let count = (proportion * client.len() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::Precondition(format!(
            "proportion {proportion} of {} examples selects nothing",
            client.len()
        )));
    }
    let candidates: Vec<usize> = client
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.true_label != spec.target_label && !e.is_unlearning)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < count {
        return Err(Error::Precondition(format!(
            "client {} has {} eligible examples, {count} requested",
            client.client_id,
            candidates.len()
        )));
    }
    let mut r = rng::stream(seed, Purpose::Backdoor, client.client_id as u64, 0);
    let order = rng::permutation(&mut r, candidates.len());
    let mut out = client.clone();
    for &o in order.iter().take(count) {
        poison(&mut out.examples[candidates[o]], spec, image);
    }
    Ok(out)
}

/// Client-scope variant: the client's target-class examples are dropped and
/// every other example is backdoored, so the whole client is unlearning data.
pub fn backdoor_whole_client(
    client: &ClientDataset,
    spec: &BackdoorSpec,
    image: (usize, usize),
) -> Result<ClientDataset> {
    let examples: Vec<LabeledExample> = client
        .examples
        .iter()
        .filter(|e| e.true_label != spec.target_label)
        .cloned()
        .map(|mut e| {
            poison(&mut e, spec, image);
            e
        })
        .collect();
    ClientDataset::new(client.client_id, examples)
}

/// Triggered copies of clean examples (excluding the target class), labelled
/// as the backdoor would teach. Used as never-trained counterparts of `D^u`.
pub fn triggered_copies(
    examples: &[LabeledExample],
    spec: &BackdoorSpec,
    image: (usize, usize),
) -> Vec<LabeledExample> {
    examples
        .iter()
        .filter(|e| e.true_label != spec.target_label)
        .cloned()
        .map(|mut e| {
            poison(&mut e, spec, image);
            e.is_unlearning = false;
            e
        })
        .collect()
}
