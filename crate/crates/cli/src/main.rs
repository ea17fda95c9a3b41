use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fedau::evaluation;
use fedau::experiment::{self, ExperimentConfig, SweepParam};
use fedau::unlearning::{Coefficients, Scope};
use fedau::Error;

/// Federated unlearning with auxiliary classifier heads.
#[derive(Debug, Parser)]
#[command(name = "fedau", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a federation with auxiliary heads and write a run directory.
    Train(TrainArgs),
    /// Apply the unlearning operation to a trained run.
    Unlearn(UnlearnArgs),
    /// Accuracy of a stored model on a stored dataset.
    Eval(EvalArgs),
    /// Full comparison table (FedAvg, FedAU, retraining, random labels).
    Experiment(ExperimentArgs),
    /// FedAU metrics across values of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: $FEDAU_OUT, the config's output_dir, or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct UnlearnArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_parser = parse_scope)]
    scope: Scope,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    /// Refuse coefficients outside the guarantee bounds (exit code 4).
    #[arg(long)]
    strict_bounds: bool,
    /// Include per-example diagnostics in the report.
    #[arg(long)]
    verbose_report: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run directory or `.fauw` model file.
    #[arg(long)]
    ckpt: PathBuf,
    /// Stored dataset base path, e.g. `<run>/data/test`.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    param: String,
    /// Comma-separated values; `inf` is accepted for gamma.
    #[arg(long)]
    values: String,
    /// Base preset (default depends on the parameter).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn output_root(flag: Option<&Path>, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os("FEDAU_OUT") {
        return PathBuf::from(p);
    }
    config
        .and_then(|c| c.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn single_preset(name: &str) -> anyhow::Result<ExperimentConfig> {
    let mut cfgs = experiment::preset(name)?;
    if cfgs.len() != 1 {
        bail!(Error::config(
            "preset",
            format!("`{name}` expands to several runs; use `experiment`")
        ));
    }
    Ok(cfgs.remove(0))
}

/// Config plus the exact text to store alongside the run.
fn load_source(source: &Source) -> anyhow::Result<(ExperimentConfig, String)> {
    match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|_| Error::config(path.display().to_string(), "cannot read config file"))?;
            let cfg = ExperimentConfig::from_json(&text, &path.display().to_string())?;
            Ok((cfg, text))
        }
        (None, Some(name)) => {
            let cfg = single_preset(name)?;
            let text = cfg.to_json();
            Ok((cfg, text))
        }
        (None, None) => unreachable!("clap enforces one source"),
    }
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let (mut cfg, text) = load_source(&args.source)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let root = output_root(args.out.as_deref(), Some(&cfg));
    let scenario = experiment::prepare(&cfg)?;
    let trained = experiment::train(&cfg, &scenario)?;
    let dir = experiment::create_run_dir(&root, &cfg.name)?;
    let fedavg = experiment::write_run(&dir, &text, &cfg, &scenario, &trained)?;
    log::info!("training took {:.2}s", trained.train_time_s);
    println!("run: {}", dir.display());
    println!("rm_acc: {:.4}  ul_acc: {:.4}", fedavg.rm_acc, fedavg.ul_acc);
    Ok(())
}

fn unlearn(args: UnlearnArgs) -> anyhow::Result<()> {
    let run = experiment::load_run(&args.ckpt)?;
    let mut coeffs: Coefficients = run.config.coefficients.clone();
    if let Some(a) = args.alpha {
        coeffs.alpha = a;
    }
    if let Some(b) = args.beta {
        coeffs.beta = b;
        coeffs.betas.clear();
    }
    let report = experiment::unlearn_run(&run, args.scope, &coeffs, args.strict_bounds, args.verbose_report)?;
    println!("unlearn_time_s: {:.9}", report.unlearn_time_s);
    println!(
        "rm_acc: {:.4}  ul_acc: {:.4}  r1: {:.4}  r2: {:.4}",
        report.metrics.rm_acc, report.metrics.ul_acc, report.requirements.r1_rate, report.requirements.r2_rate
    );
    match report.beta_bound {
        Some(b) => println!("alpha_bound: {:.6}  beta_bound: {b:.6}", report.alpha_bound),
        None => println!("alpha_bound: {:.6}", report.alpha_bound),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let report = experiment::eval_checkpoint(&args.ckpt, &args.dataset)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let cfgs = experiment::preset(&args.preset)?;
    let root = output_root(args.out.as_deref(), cfgs.first());
    let dir = experiment::create_run_dir(&root, &args.preset)?;
    let multi = cfgs.len() > 1;
    let mut rows = Vec::new();
    for cfg in &cfgs {
        let sub = if multi { dir.join(&cfg.name) } else { dir.clone() };
        let out = experiment::run_experiment(cfg)?;
        experiment::write_run(&sub, &cfg.to_json(), cfg, &out.scenario, &out.trained)?;
        for mut row in out.rows {
            if multi {
                row.method = format!("{}[{}]", row.method, cfg.name);
            }
            rows.push(row);
        }
    }
    let table = dir.join("table.csv");
    let file = fs::File::create(&table).with_context(|| format!("creating {}", table.display()))?;
    evaluation::write_table(file, &rows)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&rows)?)?;
    let mut stdout = std::io::stdout().lock();
    evaluation::write_table(&mut stdout, &rows)?;
    println!("table: {}", table.display());
    Ok(())
}

fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            let v = v.trim();
            if v == "inf" {
                Ok(f64::INFINITY)
            } else {
                v.parse::<f64>()
                    .map_err(|_| Error::config("values", format!("`{v}` is not a number")).into())
            }
        })
        .collect()
}

fn run_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let param: SweepParam = args.param.parse()?;
    let values = parse_values(&args.values)?;
    let base = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => single_preset(name)?,
        (None, None) => single_preset(param.default_preset())?,
    };
    let rows = experiment::sweep(&base, param, &values)?;
    let root = output_root(args.out.as_deref(), Some(&base));
    let dir = experiment::create_run_dir(&root, &format!("sweep-{}", param.name()))?;
    fs::write(dir.join("config.json"), base.to_json())?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("value,ul_acc,rm_acc");
    for r in &rows {
        println!("{},{:.4},{:.4}", r.value, r.ul_acc, r.rm_acc);
    }
    for line in experiment::trend_diagnostics(param, &rows) {
        println!("trend: {line}");
    }
    println!("sweep: {}", dir.join("sweep.csv").display());
    Ok(())
}

/// 2: config or input problem, 3: missing artifact, 4: bound refusal.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.downcast_ref::<Error>() else {
        return 1;
    };
    let mut e = e;
    while let Error::Round { source, .. } = e {
        e = source;
    }
    match e {
        Error::MissingArtifact(_) => 3,
        Error::BoundRefusal(_) => 4,
        Error::Config { .. }
        | Error::InvalidParameter(_)
        | Error::LabelOutOfRange { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Unlearn(a) => unlearn(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => run_experiment(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
