//! Command-line experiment runner: `generate`, `train`, `evaluate` and
//! `report` over a TOML experiment config.

pub mod config;
pub mod experiment;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dmimo_beam::evaluation::{build_report, write_report, EvalReport};
use dmimo_beam::pipeline::{read_outcomes, write_outcomes, ModelKind};
use thiserror::Error;

pub use config::ExperimentConfig;
use experiment::ExperimentData;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DMIMO_BEAM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("missing state: {0}")]
    State(String),

    #[error(transparent)]
    Core(#[from] dmimo_beam::Error),
}

impl CliError {
    /// 2 config or argument, 3 missing state, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use dmimo_beam::Error as E;
        match self {
            CliError::Config(_) | CliError::Argument(_) => 2,
            CliError::State(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Argument(_) => 2,
                E::State(_) => 3,
                E::Io { .. } | E::Format { .. } => 4,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dmimo-beam", version, about = "Beam-measurement imputation and directed beam search experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Restrict `train`, `evaluate` or `report` to one model.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Derive all seeds from this value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the scenario dataset, split and masked training set.
    Generate,
    /// Train models and write checkpoints.
    Train,
    /// Run the sweep and write outcomes and report files.
    Evaluate,
    /// Re-render report files from an existing outcomes CSV.
    Report,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.reseed(seed);
        }
        Ok(config)
    }

    fn model(&self) -> Result<Option<ModelKind>, CliError> {
        self.model
            .as_deref()
            .map(|s| s.parse::<ModelKind>().map_err(|e| CliError::Argument(e.to_string())))
            .transpose()
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let model = cli.model()?;
    let config = cli.resolve_config()?;
    match cli.command {
        Command::Generate => cmd_generate(&config).map(|_| ()),
        Command::Train => cmd_train(&config, model).map(|_| ()),
        Command::Evaluate => cmd_evaluate(&config, model).map(|_| ()),
        Command::Report => cmd_report(&config, model).map(|_| ()),
    }
}

fn selected(config: &ExperimentConfig, model: Option<ModelKind>) -> Result<Vec<ModelKind>, CliError> {
    match model {
        Some(m) => Ok(vec![m]),
        None => config.enabled_models(),
    }
}

pub fn cmd_generate(config: &ExperimentConfig) -> Result<ExperimentData, CliError> {
    let data = ExperimentData::build(config)?;
    data.save(&config.data_dir())?;
    let shape = data.dataset.shape();
    println!(
        "generated {} rows x {} beams ({} APs x {} beams); {} train rows ({} masked replicas), {} test rows -> {}",
        data.dataset.rows.len(),
        shape.len(),
        shape.num_aps,
        shape.beams_per_ap,
        data.train_idx.len(),
        data.train.rows.len(),
        data.test_idx.len(),
        config.data_dir().display()
    );
    Ok(data)
}

/// Trains `model`, or every enabled model when `None`.
pub fn cmd_train(config: &ExperimentConfig, model: Option<ModelKind>) -> Result<Vec<PathBuf>, CliError> {
    let data = ExperimentData::load(&config.data_dir())?;
    let dir = config.models_dir();
    let mut files = Vec::new();
    for m in selected(config, model)? {
        let written = experiment::train_and_save(config, &data, m, &dir)?;
        if written.is_empty() {
            println!("{m}: nothing to train");
        }
        for f in &written {
            println!("{m}: wrote {}", f.display());
        }
        files.extend(written);
    }
    Ok(files)
}

pub fn cmd_evaluate(config: &ExperimentConfig, model: Option<ModelKind>) -> Result<EvalReport<f64>, CliError> {
    let data = ExperimentData::load(&config.data_dir())?;
    let kinds = selected(config, model)?;
    let models = experiment::load_models(config, &data, &kinds, &config.models_dir())?;
    let result = experiment::sweep(config, &data, &models, &kinds)?;
    if result.passthrough_violations > 0 {
        return Err(dmimo_beam::Error::Contract(format!("{} observed entries altered by imputers", result.passthrough_violations)).into());
    }
    write_outcomes(&result.outcomes, &config.outcomes_path())?;
    println!("wrote {} outcomes to {}", result.outcomes.len(), config.outcomes_path().display());
    render(config, &result.outcomes, &kinds)
}

pub fn cmd_report(config: &ExperimentConfig, model: Option<ModelKind>) -> Result<EvalReport<f64>, CliError> {
    let path = config.outcomes_path();
    if !path.exists() {
        return Err(CliError::State(format!("no outcomes at {}; run `evaluate` first", path.display())));
    }
    let outcomes = read_outcomes::<f64>(&path)?;
    let kinds: Vec<ModelKind> = selected(config, model)?
        .into_iter()
        .filter(|m| outcomes.iter().any(|o| o.model == *m))
        .collect();
    render(config, &outcomes, &kinds)
}

fn render(config: &ExperimentConfig, outcomes: &[dmimo_beam::SearchOutcome64], kinds: &[ModelKind]) -> Result<EvalReport<f64>, CliError> {
    let report = build_report(outcomes, &config.ks, &config.masking.test_ps, kinds)?;
    let files = write_report(&report, &config.report_dir())?;
    println!("{}", w1_table(&report));
    println!("wrote {} report files to {}", files.len(), config.report_dir().display());
    Ok(report)
}

/// W1 per k (rows) and model (columns), one block per masking fraction.
pub fn w1_table(report: &EvalReport<f64>) -> String {
    let mut out = String::new();
    for &p in &report.ps {
        out.push_str(&format!("W1 [dB], p = {p}\n{:>4}", "k"));
        for m in &report.models {
            out.push_str(&format!(" {:>8}", m.as_str()));
        }
        out.push('\n');
        for &k in &report.ks {
            out.push_str(&format!("{k:>4}"));
            for &m in &report.models {
                match report.cell(m, p, k) {
                    Some(c) => out.push_str(&format!(" {:>8.3}", c.w1)),
                    None => out.push_str(&format!(" {:>8}", "-")),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Builds the global rayon pool, capped by [`THREADS_ENV`] when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure {n} worker threads: {e}")))
}
