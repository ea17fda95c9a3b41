use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{random_label_finetune, retrain_from_scratch, BaselineResult};
use crate::data::{
    backdoor_whole_client, dirichlet_partition, inject_backdoor, load_mnist_dir, synth_split, triggered_copies,
    ClientDataset, Dataset, LabeledExample, MnistSplit, PartitionPlan,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsReport};
use crate::federation::{run_federation_with, Monitor, RoundRecord, TrainedArtifacts};
use crate::nn::{Model, Stack};
use crate::unlearning::{self, AuxHeads, Coefficients, RequirementReport, Scope};

use super::config::{DatasetConfig, ExperimentConfig};

/// Everything the federation and the evaluation need, derived from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub classes: usize,
    pub image: Option<(usize, usize)>,
    pub clients: Vec<ClientDataset>,
    pub test: Vec<LabeledExample>,
}

impl Scenario {
    pub fn feature_dim(&self) -> usize {
        self.test.first().map_or(0, |e| e.features.len())
    }

    /// `D^u`: flagged examples of the unlearning clients.
    pub fn unlearning(&self, config: &ExperimentConfig) -> Vec<LabeledExample> {
        self.clients
            .iter()
            .filter(|c| config.unlearning.clients.contains(&c.client_id))
            .flat_map(ClientDataset::unlearning)
            .collect()
    }

    /// Remaining data used for the coefficient bounds and the R1 check: the
    /// unlearning clients' own remaining data, or everyone else's when a
    /// whole client is forgotten.
    pub fn remaining(&self, config: &ExperimentConfig) -> Vec<LabeledExample> {
        let own: Vec<LabeledExample> = self
            .clients
            .iter()
            .filter(|c| config.unlearning.clients.contains(&c.client_id))
            .flat_map(ClientDataset::remaining)
            .collect();
        if !own.is_empty() {
            return own;
        }
        self.clients
            .iter()
            .filter(|c| !config.unlearning.clients.contains(&c.client_id))
            .flat_map(ClientDataset::remaining)
            .collect()
    }

    /// Never-trained counterparts of `D^u` for the membership attack.
    pub fn nonmembers(&self, config: &ExperimentConfig) -> Vec<LabeledExample> {
        match (config.unlearning.scope, self.image) {
            (Scope::Class, _) => {
                let c = config.unlearning.class.unwrap_or(0);
                self.test.iter().filter(|e| e.true_label == c).cloned().collect()
            }
            (_, Some(image)) => triggered_copies(&self.test, &config.backdoor, image),
            (_, None) => Vec::new(),
        }
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetConfig::Synthetic {
            classes,
            side,
            train_per_class,
            test_per_class,
            spread,
        } => {
            let dim = side * side;
            Ok((
                synth_split(*classes, *train_per_class, dim, *spread, config.seed, 0)?,
                synth_split(*classes, *test_per_class, dim, *spread, config.seed, 1)?,
            ))
        }
        DatasetConfig::Mnist { dir, train_limit } => {
            if !dir.is_dir() {
                return Err(Error::config(
                    "dataset.dir",
                    format!("{} is not a directory", dir.display()),
                ));
            }
            let mut train = load_mnist_dir(dir, MnistSplit::Train)?;
            if let Some(n) = train_limit {
                train.examples.truncate(*n);
            }
            Ok((train, load_mnist_dir(dir, MnistSplit::Test)?))
        }
    }
}

/// Loads the data, partitions it and marks the unlearning data.
pub fn prepare(config: &ExperimentConfig) -> Result<Scenario> {
    config.validate()?;
    let (train, test) = load_dataset(config)?;
    let plan = PartitionPlan {
        gamma: config.partition.gamma,
        client_count: config.federation.clients,
        seed: config.seed,
    };
    let mut clients = dirichlet_partition(&train.examples, &plan)?;
    let u = &config.unlearning;
    let image = train.image;
    let need_image =
        || image.ok_or_else(|| Error::config("dataset", "backdoor unlearning needs image-shaped features"));
    for client in clients.iter_mut().filter(|c| u.clients.contains(&c.client_id)) {
        *client = match u.scope {
            Scope::Samples => inject_backdoor(client, u.proportion, &config.backdoor, need_image()?, config.seed)?,
            Scope::Client => backdoor_whole_client(client, &config.backdoor, need_image()?)?,
            Scope::Class => {
                let c = u.class.unwrap_or(0);
                let flagged = client.clone().flag_class(c);
                if flagged.unlearning_count() == 0 {
                    return Err(Error::Precondition(format!(
                        "client {} holds no examples of class {c}",
                        client.client_id
                    )));
                }
                flagged
            }
        };
    }
    if let Some(image) = image {
        config.backdoor.validate(image, train.classes)?;
    }
    Ok(Scenario {
        classes: train.classes,
        image,
        clients,
        test: test.examples,
    })
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub initial: Model,
    pub artifacts: TrainedArtifacts,
    pub train_time_s: f64,
}

/// Federated training with auxiliary heads for the configured plan.
pub fn train(config: &ExperimentConfig, scenario: &Scenario) -> Result<Trained> {
    let spec = config.model_spec(scenario.feature_dim(), scenario.classes);
    let initial = spec.init(config.seed)?;
    let monitor = Monitor {
        test_set: Some(&scenario.test),
        coefficients: Some(config.coefficients.clone()),
    };
    let start = Instant::now();
    let artifacts = run_federation_with(
        &config.federation_config(),
        initial.clone(),
        &scenario.clients,
        Some(&config.plan()),
        &monitor,
    )?;
    Ok(Trained {
        initial,
        artifacts,
        train_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub head: Stack,
    pub model: Model,
    pub time_s: f64,
}

/// The unlearning operation itself, timed.
pub fn apply_unlearning(
    scope: Scope,
    learned: &Model,
    aux: &AuxHeads,
    coefficients: &Coefficients,
) -> Result<UnlearnOutcome> {
    coefficients.validate()?;
    let (head, time_s) = evaluation::time_op(|| unlearning::unlearn(scope, learned.head(), aux, coefficients))?;
    Ok(UnlearnOutcome {
        model: learned.with_head(head.clone())?,
        head,
        time_s,
    })
}

/// Rm-Acc, Ul-Acc and the membership attack for one model.
pub fn evaluate_model(
    model: &Model,
    scenario: &Scenario,
    config: &ExperimentConfig,
    method: &str,
) -> Result<MetricsReport> {
    let scope = config.unlearning.scope;
    let du = scenario.unlearning(config);
    let rm = evaluation::rm_acc(model, &scenario.test, scope, config.unlearning.class)?;
    let ul = evaluation::ul_acc(model, &du)?;
    let mut report = MetricsReport::new(scope, method, rm, ul);
    let nonmembers = scenario.nonmembers(config);
    if du.len().min(nonmembers.len()) >= 4 {
        report = report.with_mia(evaluation::mia_loss_threshold(model, &du, &nonmembers, config.seed)?);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub scenario: Scenario,
    pub trained: Trained,
    pub unlearned: UnlearnOutcome,
    pub requirements: RequirementReport,
    pub alpha_bound: f32,
    pub beta_bound: Option<f32>,
    pub retrained: Option<BaselineResult>,
    pub finetuned: Option<BaselineResult>,
    /// FedAvg, FedAU and the enabled baselines, in that order.
    pub rows: Vec<MetricsReport>,
}

impl ExperimentOutcome {
    pub fn row(&self, method: &str) -> Option<&MetricsReport> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.trained.artifacts.rounds
    }
}

/// Train, unlearn, run baselines, evaluate every model.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let scenario = prepare(config)?;
    let trained = train(config, &scenario)?;
    finish_experiment(config, scenario, trained)
}

pub(crate) fn finish_experiment(
    config: &ExperimentConfig,
    scenario: Scenario,
    trained: Trained,
) -> Result<ExperimentOutcome> {
    let scope = config.unlearning.scope;
    let learned = &trained.artifacts.model;
    let aux = &trained.artifacts.aux;
    let unlearned = apply_unlearning(scope, learned, aux, &config.coefficients)?;

    let du = scenario.unlearning(config);
    let dr = scenario.remaining(config);
    let requirements =
        unlearning::verify_requirements(learned.extractor(), learned.head(), &unlearned.head, &dr, &du, false)?;
    let alpha_bound = unlearning::alpha_bound(learned, &dr)?;
    let beta_bound = match aux.per_client.values().next() {
        Some(h) if scope == Scope::Class => Some(unlearning::beta_bound(learned, &learned.with_head(h.clone())?, &dr)?),
        _ => None,
    };

    let mut rows = vec![evaluate_model(learned, &scenario, config, "FedAvg")?];
    let mut fedau = evaluate_model(&unlearned.model, &scenario, config, "FedAU")?;
    let (time_s, bytes) = evaluation::cost_accounting(unlearned.time_s, Some(aux));
    fedau.unlearn_time_s = time_s;
    fedau.stored_bytes = bytes;
    fedau.r1_rate = Some(requirements.r1_rate);
    fedau.r2_rate = Some(requirements.r2_rate);
    rows.push(fedau);

    let retrained = if config.baselines.retrain {
        let r = retrain_from_scratch(&config.federation_config(), trained.initial.clone(), &scenario.clients)?;
        let mut row = evaluate_model(&r.model, &scenario, config, "Retraining")?;
        row.unlearn_time_s = r.wall_time_s;
        rows.push(row);
        Some(r)
    } else {
        None
    };
    let finetuned = if config.baselines.random_label {
        let r = random_label_finetune(
            learned,
            &du,
            config.baselines.finetune_epochs,
            &config.federation.sgd,
            config.seed,
        )?;
        let mut row = evaluate_model(&r.model, &scenario, config, "RandomLabel")?;
        row.unlearn_time_s = r.wall_time_s;
        rows.push(row);
        Some(r)
    } else {
        None
    };

    Ok(ExperimentOutcome {
        scenario,
        trained,
        unlearned,
        requirements,
        alpha_bound,
        beta_bound,
        retrained,
        finetuned,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Proportion,
    AuxPosition,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepParam::Alpha,
            "beta" => SweepParam::Beta,
            "gamma" => SweepParam::Gamma,
            "proportion" => SweepParam::Proportion,
            "aux_position" => SweepParam::AuxPosition,
            other => {
                return Err(Error::config(
                    "param",
                    format!("unknown sweep parameter `{other}` (alpha, beta, gamma, proportion, aux_position)"),
                ))
            }
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Proportion => "proportion",
            SweepParam::AuxPosition => "aux_position",
        }
    }

    /// Preset a sweep starts from when none is given.
    pub fn default_preset(self) -> &'static str {
        match self {
            SweepParam::Beta => "synth-class",
            _ => "synth-samples",
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let (ok, range) = match self {
            SweepParam::Alpha => (v > 0.0 && v <= 1.0, "(0, 1]"),
            SweepParam::Beta => (v >= 0.0 && v.is_finite(), "[0, inf)"),
            SweepParam::Gamma => (v > 0.0, "(0, inf], inf meaning IID"),
            SweepParam::Proportion => (v > 0.0 && v < 1.0, "(0, 1)"),
            SweepParam::AuxPosition => ((1.0..=3.0).contains(&v) && v.fract() == 0.0, "{1, 2, 3}"),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "values",
                format!("{} value {v} outside {range}", self.name()),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub ul_acc: f64,
    pub rm_acc: f64,
}

/// One FedAU row per value. Coefficient sweeps reuse a single training run;
/// the others retrain for every value.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "no values given"));
    }
    for &v in values {
        param.check(v)?;
    }
    let mut base = base.clone();
    base.baselines.retrain = false;
    base.baselines.random_label = false;
    match param {
        SweepParam::Alpha | SweepParam::Beta => {
            let scenario = prepare(&base)?;
            let trained = train(&base, &scenario)?;
            let learned = &trained.artifacts.model;
            values
                .iter()
                .map(|&v| {
                    let mut coeffs = base.coefficients.clone();
                    if param == SweepParam::Alpha {
                        coeffs.alpha = v as f32;
                    } else {
                        coeffs.beta = v as f32;
                        coeffs.betas.clear();
                    }
                    let out = apply_unlearning(base.unlearning.scope, learned, &trained.artifacts.aux, &coeffs)?;
                    let m = evaluate_model(&out.model, &scenario, &base, "FedAU")?;
                    Ok(SweepRow {
                        value: v,
                        ul_acc: m.ul_acc,
                        rm_acc: m.rm_acc,
                    })
                })
                .collect()
        }
        _ => values
            .iter()
            .map(|&v| {
                let mut cfg = base.clone();
                match param {
                    SweepParam::Gamma => cfg.partition.gamma = v.is_finite().then_some(v),
                    SweepParam::Proportion => cfg.unlearning.proportion = v,
                    _ => cfg.model.head_depth = v as usize,
                }
                let scenario = prepare(&cfg)?;
                let trained = train(&cfg, &scenario)?;
                let out = apply_unlearning(
                    cfg.unlearning.scope,
                    &trained.artifacts.model,
                    &trained.artifacts.aux,
                    &cfg.coefficients,
                )?;
                let m = evaluate_model(&out.model, &scenario, &cfg, "FedAU")?;
                Ok(SweepRow {
                    value: v,
                    ul_acc: m.ul_acc,
                    rm_acc: m.rm_acc,
                })
            })
            .collect(),
    }
}

/// Human-readable checks of the expected monotone trends.
pub fn trend_diagnostics(param: SweepParam, rows: &[SweepRow]) -> Vec<String> {
    const NOISE: f64 = 0.01;
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    let pairs = || sorted.windows(2).map(|w| (w[0], w[1]));
    let verdict = |ok: bool| if ok { "holds" } else { "violated" };
    match param {
        SweepParam::Alpha => {
            let ul = pairs().all(|(a, b)| b.ul_acc + NOISE >= a.ul_acc);
            let rm = pairs().all(|(a, b)| b.rm_acc + NOISE >= a.rm_acc);
            vec![
                format!("ul_acc non-decreasing in alpha: {}", verdict(ul)),
                format!("rm_acc non-decreasing in alpha: {}", verdict(rm)),
            ]
        }
        SweepParam::Beta => {
            let ul = pairs().all(|(a, b)| b.ul_acc <= a.ul_acc + NOISE);
            vec![format!("ul_acc non-increasing in beta: {}", verdict(ul))]
        }
        _ => sorted
            .iter()
            .map(|r| {
                format!(
                    "{}={}: ul_acc={:.4} rm_acc={:.4}",
                    param.name(),
                    r.value,
                    r.ul_acc,
                    r.rm_acc
                )
            })
            .collect(),
    }
}
