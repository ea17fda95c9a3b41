//! Run directory layout:
//!
//! ```text
//! <run>/config.json            config as given
//! <run>/checkpoints/model.fauw extractor + learned head
//! <run>/checkpoints/learned_head.fauw
//! <run>/checkpoints/aux_<k>.fauw, aux_aggregated.fauw
//! <run>/data/client_<k>.{fauw,json}, test.{fauw,json}, meta.json
//! <run>/rounds.jsonl
//! <run>/report.json            timing-free, so reruns are byte-identical
//! <run>/resolved.json          config after command-line overrides
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{load_client, load_examples, save_client, save_examples};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsReport};
use crate::federation::rounds_jsonl;
use crate::nn::{self, LabelSource, Model};
use crate::unlearning::{self, AuxHeads, Coefficients, RequirementReport, Scope};

use super::config::ExperimentConfig;
use super::pipeline::{Scenario, Trained};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    classes: usize,
    image: Option<(usize, usize)>,
    clients: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    fedavg: MetricsReport,
    aux_clients: Vec<usize>,
    aux_aggregated: bool,
    stored_bytes: usize,
}

/// A training run read back from disk.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub model: Model,
    pub aux: AuxHeads,
    pub scenario: Scenario,
}

/// `<root>/<name>/<timestamp>`, with a numeric suffix if that already exists.
pub fn create_run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S").to_string();
    let base = root.join(name);
    let mut dir = base.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a finished training run. `config_text` is stored verbatim.
pub fn write_run(
    dir: &Path,
    config_text: &str,
    config: &ExperimentConfig,
    scenario: &Scenario,
    trained: &Trained,
) -> Result<MetricsReport> {
    write(&dir.join("config.json"), config_text)?;
    write(&dir.join("resolved.json"), config.to_json())?;
    let ck = dir.join("checkpoints");
    let art = &trained.artifacts;
    checkpoint::save_model(&ck.join("model.fauw"), &art.model)?;
    checkpoint::save_head(&ck.join("learned_head.fauw"), art.model.head())?;
    for (k, head) in &art.aux.per_client {
        checkpoint::save_head(&ck.join(format!("aux_{k}.fauw")), head)?;
    }
    if let Some(agg) = &art.aux.aggregated {
        checkpoint::save_head(&ck.join("aux_aggregated.fauw"), agg)?;
    }

    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    for c in &scenario.clients {
        save_client(&data.join(format!("client_{}", c.client_id)), c)?;
    }
    save_examples(&data.join("test"), &scenario.test)?;
    let meta = Meta {
        classes: scenario.classes,
        image: scenario.image,
        clients: scenario.clients.iter().map(|c| c.client_id).collect(),
    };
    write(&data.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    write(&dir.join("rounds.jsonl"), rounds_jsonl(&art.rounds)?)?;
    let fedavg = super::evaluate_model(&art.model, scenario, config, "FedAvg")?;
    let report = TrainReport {
        fedavg: fedavg.without_timing(),
        aux_clients: art.aux.per_client.keys().copied().collect(),
        aux_aggregated: art.aux.aggregated.is_some(),
        stored_bytes: evaluation::stored_bytes(&art.aux),
    };
    write(&dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(fedavg)
}

/// Reads a run written by [`write_run`]. Missing auxiliary heads are not an
/// error here; unlearning reports them.
pub fn load_run(dir: &Path) -> Result<TrainedRun> {
    let config = ExperimentConfig::load(&dir.join("resolved.json"))?;
    let ck = dir.join("checkpoints");
    let model = checkpoint::load_model(&ck.join("model.fauw"))?;
    let mut aux = AuxHeads::default();
    for &k in &config.unlearning.clients {
        let p = ck.join(format!("aux_{k}.fauw"));
        if p.exists() {
            aux.per_client.insert(k, checkpoint::load_head(&p)?);
        }
    }
    let agg = ck.join("aux_aggregated.fauw");
    if agg.exists() {
        aux.aggregated = Some(checkpoint::load_head(&agg)?);
    }

    let data = dir.join("data");
    let meta_path = data.join("meta.json");
    let raw = fs::read(&meta_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(meta_path.display().to_string()),
        _ => Error::io(&meta_path, e),
    })?;
    let meta: Meta = serde_json::from_slice(&raw)?;
    let clients = meta
        .clients
        .iter()
        .map(|k| load_client(&data.join(format!("client_{k}"))))
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario {
        classes: meta.classes,
        image: meta.image,
        clients,
        test: load_examples(&data.join("test"))?,
    };
    Ok(TrainedRun {
        dir: dir.to_path_buf(),
        config,
        model,
        aux,
        scenario,
    })
}

/// What `unlearn` writes next to a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub scope: Scope,
    pub alpha: f32,
    pub beta: f32,
    pub unlearn_time_s: f64,
    pub alpha_bound: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_bound: Option<f32>,
    pub metrics: MetricsReport,
    pub requirements: RequirementReport,
}

/// Applies unlearning to a stored run and writes
/// `checkpoints/unlearned_head.fauw`, `checkpoints/unlearned_model.fauw`
/// and `unlearn_report.json`.
///
/// With `strict_bounds`, coefficients that are not below their guarantee
/// bound are refused before anything is written.
pub fn unlearn_run(
    run: &TrainedRun,
    scope: Scope,
    coefficients: &Coefficients,
    strict_bounds: bool,
    verbose: bool,
) -> Result<UnlearnReport> {
    let mut config = run.config.clone();
    if scope != config.unlearning.scope {
        if scope == Scope::Class || config.unlearning.scope == Scope::Class {
            return Err(Error::config(
                "scope",
                format!(
                    "run was trained for {} unlearning, cannot apply {scope}",
                    config.unlearning.scope
                ),
            ));
        }
        config.unlearning.scope = scope;
    }
    config.coefficients = coefficients.clone();
    coefficients
        .validate()
        .map_err(|e| Error::config("coefficients", e.to_string()))?;
    if run.aux.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no auxiliary head under {}",
            run.dir.join("checkpoints").display()
        )));
    }

    let du = run.scenario.unlearning(&config);
    let dr = run.scenario.remaining(&config);
    let alpha_bound = unlearning::alpha_bound(&run.model, &dr)?;
    let beta_bound = match (scope, run.aux.per_client.values().next()) {
        (Scope::Class, Some(h)) => Some(unlearning::beta_bound(
            &run.model,
            &run.model.with_head(h.clone())?,
            &dr,
        )?),
        _ => None,
    };
    if strict_bounds {
        match scope {
            Scope::Class => {
                let bound = beta_bound.unwrap_or(0.0);
                let worst = coefficients.betas.values().fold(coefficients.beta, |m, b| m.max(*b));
                if !(worst < bound) {
                    return Err(Error::BoundRefusal(format!(
                        "beta {worst} is not below the bound {bound}"
                    )));
                }
            }
            _ => {
                if !(coefficients.alpha < alpha_bound) {
                    return Err(Error::BoundRefusal(format!(
                        "alpha {} is not below the bound {alpha_bound}",
                        coefficients.alpha
                    )));
                }
            }
        }
    }

    let out = super::apply_unlearning(scope, &run.model, &run.aux, coefficients)?;
    let requirements =
        unlearning::verify_requirements(run.model.extractor(), run.model.head(), &out.head, &dr, &du, verbose)?;
    let mut metrics = super::evaluate_model(&out.model, &run.scenario, &config, "FedAU")?;
    metrics.unlearn_time_s = out.time_s;
    metrics.stored_bytes = evaluation::stored_bytes(&run.aux);
    metrics.r1_rate = Some(requirements.r1_rate);
    metrics.r2_rate = Some(requirements.r2_rate);

    let ck = run.dir.join("checkpoints");
    checkpoint::save_head(&ck.join("unlearned_head.fauw"), &out.head)?;
    checkpoint::save_model(&ck.join("unlearned_model.fauw"), &out.model)?;
    let report = UnlearnReport {
        scope,
        alpha: coefficients.alpha,
        beta: coefficients.beta,
        unlearn_time_s: out.time_s,
        alpha_bound,
        beta_bound,
        metrics,
        requirements,
    };
    write(
        &run.dir.join("unlearn_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub count: usize,
    pub accuracy: f64,
    pub accuracy_as_trained: f64,
}

/// Accuracy of a stored model on a stored dataset. `ckpt` is either a
/// `.fauw` model file or a run directory, in which case the unlearned model
/// is preferred over the learned one.
pub fn eval_checkpoint(ckpt: &Path, dataset: &Path) -> Result<EvalReport> {
    let model_path = if ckpt.is_dir() {
        let unlearned = ckpt.join("checkpoints").join("unlearned_model.fauw");
        if unlearned.exists() {
            unlearned
        } else {
            ckpt.join("checkpoints").join("model.fauw")
        }
    } else {
        ckpt.to_path_buf()
    };
    let model = checkpoint::load_model(&model_path)?;
    let examples = load_examples(dataset).map_err(|e| match e {
        Error::MissingArtifact(m) => Error::config("dataset", format!("{m} not found")),
        other => other,
    })?;
    Ok(EvalReport {
        model: model_path,
        dataset: dataset.to_path_buf(),
        count: examples.len(),
        accuracy: nn::evaluate_accuracy(&model, &examples, LabelSource::True)?,
        accuracy_as_trained: nn::evaluate_accuracy(&model, &examples, LabelSource::AsTrained)?,
    })
}
