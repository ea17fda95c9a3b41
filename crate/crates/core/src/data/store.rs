//! Dataset cache: features in a `FAUW` container (`<base>.fauw`, tensor
//! `features` of shape `[n x dim]`) plus a JSON sidecar (`<base>.json`)
//! holding labels and flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ClientDataset, LabeledExample};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    client_id: Option<usize>,
    count: usize,
    feature_dim: usize,
    true_labels: Vec<usize>,
    trained_labels: Vec<usize>,
    is_unlearning: Vec<bool>,
    backdoored: Vec<bool>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("fauw"), base.with_extension("json"))
}

fn save(base: &Path, examples: &[LabeledExample], client_id: Option<usize>) -> Result<()> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Empty("refusing to store an empty dataset".into()))?;
    let dim = first.features.len();
    let refs: Vec<&LabeledExample> = examples.iter().collect();
    let features = Tensor::new(vec![examples.len(), dim], super::gather_features(&refs, dim)?)?;
    let (bin, json) = paths(base);
    checkpoint::write_file(&bin, &[("features".to_string(), features)])?;
    let sidecar = Sidecar {
        client_id,
        count: examples.len(),
        feature_dim: dim,
        true_labels: examples.iter().map(|e| e.true_label).collect(),
        trained_labels: examples.iter().map(|e| e.trained_label).collect(),
        is_unlearning: examples.iter().map(|e| e.is_unlearning).collect(),
        backdoored: examples.iter().map(|e| e.backdoored).collect(),
    };
    fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

fn load(base: &Path) -> Result<(Option<usize>, Vec<LabeledExample>)> {
    let (bin, json) = paths(base);
    let tensors = checkpoint::read_file(&bin)?;
    let features = tensors
        .into_iter()
        .find(|(n, _)| n == "features")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint(format!("{} has no `features` tensor", bin.display())))?;
    let raw = fs::read(&json).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(json.display().to_string())
        } else {
            Error::io(&json, e)
        }
    })?;
    let s: Sidecar = serde_json::from_slice(&raw)?;
    let (n, dim) = features.shape2()?;
    let lens = [
        s.true_labels.len(),
        s.trained_labels.len(),
        s.is_unlearning.len(),
        s.backdoored.len(),
    ];
    if n != s.count || dim != s.feature_dim || lens.iter().any(|&l| l != n) {
        return Err(Error::Checkpoint(format!(
            "sidecar {} disagrees with {n}x{dim} features",
            json.display()
        )));
    }
    let examples = features
        .rows()
        .enumerate()
        .map(|(i, row)| LabeledExample {
            features: row.to_vec(),
            true_label: s.true_labels[i],
            trained_label: s.trained_labels[i],
            is_unlearning: s.is_unlearning[i],
            backdoored: s.backdoored[i],
        })
        .collect();
    Ok((s.client_id, examples))
}

pub fn save_examples(base: &Path, examples: &[LabeledExample]) -> Result<()> {
    save(base, examples, None)
}

pub fn load_examples(base: &Path) -> Result<Vec<LabeledExample>> {
    Ok(load(base)?.1)
}

pub fn save_client(base: &Path, client: &ClientDataset) -> Result<()> {
    save(base, &client.examples, Some(client.client_id))
}

pub fn load_client(base: &Path) -> Result<ClientDataset> {
    let (id, examples) = load(base)?;
    let id = id.ok_or_else(|| Error::Checkpoint(format!("{} is not a client dataset", base.display())))?;
    ClientDataset::new(id, examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ex = vec![
            LabeledExample::new(vec![0.25, 0.5], 1),
            LabeledExample::new(vec![1.0, 0.0], 2),
        ];
        ex[1].trained_label = 0;
        ex[1].is_unlearning = true;
        ex[1].backdoored = true;
        let c = ClientDataset::new(3, ex).unwrap();
        let base = dir.path().join("client_3");
        save_client(&base, &c).unwrap();
        assert_eq!(load_client(&base).unwrap(), c);
    }
}
