//! Datasets, client partitions, backdoor unlearning samples and the
//! relabelled auxiliary datasets used to train unlearning heads.

mod auxiliary;
mod backdoor;
mod mnist;
mod partition;
mod store;
mod synth;

pub use auxiliary::{build_aux_dataset_class, build_aux_dataset_sample, relabel_away};
pub use backdoor::{backdoor_whole_client, inject_backdoor, stamp, triggered_copies, BackdoorSpec};
pub use mnist::{load_idx_images, load_idx_labels, load_mnist, load_mnist_dir, MnistSplit};
pub use partition::{dirichlet_partition, largest_remainder, PartitionPlan};
pub use store::{load_client, load_examples, save_client, save_examples};
pub use synth::{synth_blobs, synth_split};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training or test example.
///
/// `trained_label` is the label the federation learns from. It equals
/// `true_label` except on backdoored examples, which carry the poisoned
/// target label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f32>,
    pub true_label: usize,
    pub trained_label: usize,
    pub is_unlearning: bool,
    pub backdoored: bool,
}

impl LabeledExample {
    pub fn new(features: Vec<f32>, label: usize) -> Self {
        LabeledExample {
            features,
            true_label: label,
            trained_label: label,
            is_unlearning: false,
            backdoored: false,
        }
    }
}

/// A labelled dataset with its class count and, for image data, the
/// `(rows, cols)` layout of the flattened features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub feature_dim: usize,
    pub image: Option<(usize, usize)>,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for ex in &self.examples {
            h[ex.true_label] += 1;
        }
        h
    }

    /// Examples whose true label is not `class`.
    pub fn without_class(&self, class: usize) -> Vec<LabeledExample> {
        self.examples
            .iter()
            .filter(|e| e.true_label != class)
            .cloned()
            .collect()
    }

    pub fn of_class(&self, class: usize) -> Vec<LabeledExample> {
        self.examples
            .iter()
            .filter(|e| e.true_label == class)
            .cloned()
            .collect()
    }
}

/// A client's local data; `is_unlearning` marks `D^u`, the rest is `D^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub examples: Vec<LabeledExample>,
}

impl ClientDataset {
    pub fn new(client_id: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty(format!("client {client_id} has no examples")));
        }
        Ok(ClientDataset { client_id, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn unlearning(&self) -> Vec<LabeledExample> {
        self.examples.iter().filter(|e| e.is_unlearning).cloned().collect()
    }

    pub fn remaining(&self) -> Vec<LabeledExample> {
        self.examples.iter().filter(|e| !e.is_unlearning).cloned().collect()
    }

    pub fn unlearning_count(&self) -> usize {
        self.examples.iter().filter(|e| e.is_unlearning).count()
    }

    /// Marks every example of `class` as unlearning data.
    pub fn flag_class(mut self, class: usize) -> Self {
        for ex in &mut self.examples {
            if ex.trained_label == class {
                ex.is_unlearning = true;
            }
        }
        self
    }

    /// Marks the whole client as unlearning data.
    pub fn flag_all(mut self) -> Self {
        for ex in &mut self.examples {
            ex.is_unlearning = true;
        }
        self
    }

    /// Client with its unlearning examples dropped; `None` when nothing remains.
    pub fn without_unlearning(&self) -> Option<ClientDataset> {
        let rest = self.remaining();
        (!rest.is_empty()).then_some(ClientDataset {
            client_id: self.client_id,
            examples: rest,
        })
    }
}

/// Flattens examples into a row-major `[n x dim]` buffer.
pub fn gather_features(examples: &[&LabeledExample], dim: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(examples.len() * dim);
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.len() != dim {
            return Err(Error::Dimension(format!(
                "example {i} has {} features, model expects {dim}",
                ex.features.len()
            )));
        }
        out.extend_from_slice(&ex.features);
    }
    Ok(out)
}

/// Checks labels and feature ranges against a class count.
pub fn validate_examples(examples: &[LabeledExample], classes: usize) -> Result<()> {
    for (i, ex) in examples.iter().enumerate() {
        for label in [ex.true_label, ex.trained_label] {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        if ex.features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "example {i} has features outside [0,1]"
            )));
        }
    }
    Ok(())
}
