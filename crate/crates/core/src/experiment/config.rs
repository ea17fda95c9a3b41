use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BackdoorSpec;
use crate::error::{Error, Result};
use crate::federation::{AuxInit, AuxMode, FederationConfig, UnlearningPlan};
use crate::nn::{ModelSpec, SgdConfig};
use crate::unlearning::{Coefficients, Scope};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs on a `side x side` grid, one blob per class.
    Synthetic {
        classes: usize,
        side: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    /// IDX files in `dir` under their usual names.
    Mnist {
        dir: PathBuf,
        /// Keeps only the first `n` training examples.
        #[serde(default)]
        train_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "one")]
    pub head_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Dirichlet concentration; absent for an IID split.
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSettings {
    pub clients: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default)]
    pub sgd: SgdConfig,
    /// Defaults to ten rounds before the end.
    #[serde(default)]
    pub aux_start_round: Option<usize>,
    #[serde(default = "one")]
    pub aux_epochs_per_round: usize,
    #[serde(default = "default_client_mix")]
    pub client_mix: f32,
    #[serde(default)]
    pub sample_weighted: bool,
    #[serde(default)]
    pub aux_init: Option<AuxInit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearningSettings {
    pub scope: Scope,
    pub clients: BTreeSet<usize>,
    #[serde(default)]
    pub class: Option<usize>,
    #[serde(default = "default_aux_mode")]
    pub aux_mode: AuxMode,
    /// Share of each unlearning client's data that is backdoored (sample scope).
    #[serde(default = "default_proportion")]
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    #[serde(default = "yes")]
    pub retrain: bool,
    #[serde(default = "yes")]
    pub random_label: bool,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            retrain: true,
            random_label: true,
            finetune_epochs: default_finetune_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default = "iid")]
    pub partition: PartitionConfig,
    pub federation: FederationSettings,
    pub unlearning: UnlearningSettings,
    #[serde(default)]
    pub coefficients: Coefficients,
    #[serde(default)]
    pub backdoor: BackdoorSpec,
    #[serde(default)]
    pub baselines: BaselineSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn iid() -> PartitionConfig {
    PartitionConfig { gamma: None }
}
fn default_client_mix() -> f32 {
    0.3
}
fn default_aux_mode() -> AuxMode {
    AuxMode::Private
}
fn default_proportion() -> f64 {
    0.1
}
fn default_finetune_epochs() -> usize {
    5
}

impl ExperimentConfig {
    /// Parses JSON; schema errors name the offending field path.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{origin}: {path}"), e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config(path.display().to_string(), "config file not found")
            } else {
                Error::io(path, e)
            }
        })?;
        ExperimentConfig::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Cross-field checks. Errors carry the field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(Error::config(path, msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }
        let classes = match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                side,
                train_per_class,
                test_per_class,
                spread,
            } => {
                if *classes < 2 {
                    return bad("dataset.classes", "need at least 2 classes".into());
                }
                if *side == 0 || *train_per_class == 0 || *test_per_class == 0 {
                    return bad("dataset", "side and per-class counts must be positive".into());
                }
                if !(*spread >= 0.0) {
                    return bad("dataset.spread", format!("must be nonnegative, got {spread}"));
                }
                *classes
            }
            DatasetConfig::Mnist { .. } => 10,
        };
        let f = &self.federation;
        if f.clients == 0 {
            return bad("federation.clients", "must be positive".into());
        }
        if f.rounds == 0 {
            return bad("federation.rounds", "must be positive".into());
        }
        if f.aux_start_round == Some(0) {
            return bad("federation.aux_start_round", "rounds are numbered from 1".into());
        }
        if let Err(e) = f.sgd.validate() {
            return bad("federation.sgd", e.to_string());
        }
        if !(0.0..=1.0).contains(&f.client_mix) {
            return bad(
                "federation.client_mix",
                format!("must be in [0,1], got {}", f.client_mix),
            );
        }
        if let Some(g) = self.partition.gamma {
            if !(g > 0.0) {
                return bad("partition.gamma", format!("must be positive, got {g}"));
            }
        }
        let u = &self.unlearning;
        if let Err(e) = self.plan().validate(classes, f.clients) {
            let field = match e {
                Error::LabelOutOfRange { .. } => "unlearning.class",
                _ if u.clients.is_empty() || u.clients.iter().any(|&k| k >= f.clients) => "unlearning.clients",
                _ => "unlearning.class",
            };
            return bad(field, e.to_string());
        }
        if u.scope == Scope::Samples && !(u.proportion > 0.0 && u.proportion < 1.0) {
            return bad(
                "unlearning.proportion",
                format!("must be in (0,1), got {}", u.proportion),
            );
        }
        if let Err(e) = self.coefficients.validate() {
            return bad("coefficients", e.to_string());
        }
        if self.backdoor.target_label >= classes {
            return bad("backdoor.target_label", format!("{classes} classes"));
        }
        let spec = self.model_spec(1, classes);
        if let Err(e) = spec.validate() {
            return bad("model", e.to_string());
        }
        Ok(())
    }

    pub fn federation_config(&self) -> FederationConfig {
        let f = &self.federation;
        let mut cfg = FederationConfig::new(f.clients, f.rounds, self.seed);
        cfg.local_epochs = f.local_epochs;
        cfg.sgd = f.sgd;
        if let Some(a) = f.aux_start_round {
            cfg.aux_start_round = a;
        }
        cfg.aux_epochs_per_round = f.aux_epochs_per_round;
        cfg.client_mix = f.client_mix;
        cfg.sample_weighted = f.sample_weighted;
        cfg.aux_init = f.aux_init;
        cfg
    }

    pub fn plan(&self) -> UnlearningPlan {
        UnlearningPlan {
            scope: self.unlearning.scope,
            clients: self.unlearning.clients.clone(),
            class: self.unlearning.class,
            aux_mode: self.unlearning.aux_mode,
        }
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.model.hidden.clone(),
            classes,
            head_depth: self.model.head_depth,
        }
    }
}
