use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::data::BackdoorSpec;
use crate::error::{Error, Result};
use crate::federation::AuxMode;
use crate::nn::SgdConfig;
use crate::unlearning::{Coefficients, Scope};

use super::config::*;

pub const PRESET_NAMES: &[&str] = &[
    "synth-smoke",
    "synth-samples",
    "synth-class",
    "synth-client",
    "mnist-samples",
    "mnist-class",
    "mnist-client",
    "multi-client",
    "multi-client-N",
    "noniid",
    "noniid-GAMMA",
];

const MULTI_CLIENT_SIZES: [usize; 4] = [3, 5, 8, 10];
const NONIID_GAMMAS: [Option<f64>; 3] = [Some(1.0), Some(10.0), None];

fn synth_dataset() -> DatasetConfig {
    DatasetConfig::Synthetic {
        classes: 10,
        side: 8,
        train_per_class: 600,
        test_per_class: 200,
        spread: 0.25,
    }
}

fn mnist_dataset() -> DatasetConfig {
    let dir = std::env::var_os("FEDAU_MNIST_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);
    DatasetConfig::Mnist { dir, train_limit: None }
}

fn base(name: &str, dataset: DatasetConfig, hidden: Vec<usize>, scope: Scope) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        seed: 2024,
        dataset,
        model: ModelConfig { hidden, head_depth: 1 },
        partition: PartitionConfig { gamma: None },
        federation: FederationSettings {
            clients: 10,
            rounds: 50,
            local_epochs: 5,
            sgd: SgdConfig::default(),
            aux_start_round: Some(1),
            aux_epochs_per_round: 1,
            client_mix: 0.3,
            sample_weighted: false,
            aux_init: None,
        },
        unlearning: UnlearningSettings {
            scope,
            clients: BTreeSet::from([0]),
            class: (scope == Scope::Class).then_some(1),
            aux_mode: AuxMode::Private,
            proportion: 0.1,
        },
        coefficients: Coefficients::default(),
        backdoor: BackdoorSpec::default(),
        baselines: BaselineSettings::default(),
        output_dir: None,
    }
}

fn synth(name: &str, scope: Scope) -> ExperimentConfig {
    base(name, synth_dataset(), vec![128, 64], scope)
}

fn multi_client(n: usize) -> ExperimentConfig {
    let mut cfg = synth(&format!("multi-client-{n}"), Scope::Samples);
    cfg.unlearning.clients = (0..n).collect();
    cfg.unlearning.aux_mode = AuxMode::Collaborative;
    cfg
}

fn gamma_label(g: Option<f64>) -> String {
    g.map_or_else(|| "inf".to_string(), |g| format!("{g}"))
}

fn noniid(gamma: Option<f64>) -> ExperimentConfig {
    let mut cfg = synth(&format!("noniid-{}", gamma_label(gamma)), Scope::Samples);
    cfg.partition.gamma = gamma;
    cfg
}

/// Looks up a named preset. Sweep presets expand to several configs.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let one = |c: ExperimentConfig| Ok(vec![c]);
    match name {
        "synth-smoke" => {
            let mut c = synth(name, Scope::Samples);
            c.dataset = DatasetConfig::Synthetic {
                classes: 10,
                side: 8,
                train_per_class: 150,
                test_per_class: 30,
                spread: 0.25,
            };
            c.model.hidden = vec![64, 32];
            c.federation.clients = 4;
            c.federation.rounds = 10;
            c.baselines.retrain = false;
            one(c)
        }
        "synth-samples" => one(synth(name, Scope::Samples)),
        "synth-class" => one(synth(name, Scope::Class)),
        "synth-client" => one(synth(name, Scope::Client)),
        "mnist-samples" => one(base(name, mnist_dataset(), vec![256, 128], Scope::Samples)),
        "mnist-class" => one(base(name, mnist_dataset(), vec![256, 128], Scope::Class)),
        "mnist-client" => one(base(name, mnist_dataset(), vec![256, 128], Scope::Client)),
        "multi-client" => Ok(MULTI_CLIENT_SIZES.iter().map(|&n| multi_client(n)).collect()),
        "noniid" => Ok(NONIID_GAMMAS.iter().map(|&g| noniid(g)).collect()),
        _ => {
            if let Some(n) = name.strip_prefix("multi-client-") {
                if let Ok(n) = n.parse::<usize>() {
                    if (1..=10).contains(&n) {
                        return one(multi_client(n));
                    }
                }
            }
            if let Some(g) = name.strip_prefix("noniid-") {
                let gamma = match g {
                    "inf" | "iid" => Some(None),
                    _ => g.parse::<f64>().ok().filter(|g| *g > 0.0).map(Some),
                };
                if let Some(gamma) = gamma {
                    return one(noniid(gamma));
                }
            }
            Err(Error::config(
                "preset",
                format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")),
            ))
        }
    }
}
