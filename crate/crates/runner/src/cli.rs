use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiment::run_experiment;
use crate::output::render_table;

#[derive(Debug, Parser)]
#[command(name = "natspace", version, about = "Train small classifiers, trace per-sample dynamics and run data interventions")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Baseline training on the full training set, with traces.
    Train(RunArgs),
    /// Retrain on subgroups selected from a traced run.
    Subgroup(RunArgs),
    /// Add a noise category and compare against no noise.
    NoiseSweep(RunArgs),
    /// Retrain without consistently misclassified samples.
    ExcludeIllusive(RunArgs),
    /// FGSM robustness with and without illusive samples.
    AdvEval(RunArgs),
    /// Relabel illusive samples into new categories and glue them back.
    RelabelGlue(RunArgs),
    /// Fit the step function from two different sample layouts.
    StepDemo(RunArgs),
    /// Print the report tables found in an output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the run count.
    #[arg(long)]
    pub runs: Option<usize>,
    /// CIFAR-10 directory; `DATA_DIR` is used when absent.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by an experiment.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for symmetry with the other subcommands; unused.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Command {
    fn kind(&self) -> Option<ExperimentKind> {
        Some(match self {
            Command::Train(_) => ExperimentKind::Baseline,
            Command::Subgroup(_) => ExperimentKind::Subgroup,
            Command::NoiseSweep(_) => ExperimentKind::NoiseSweep,
            Command::ExcludeIllusive(_) => ExperimentKind::ExcludeIllusive,
            Command::AdvEval(_) => ExperimentKind::AdvEval,
            Command::RelabelGlue(_) => ExperimentKind::RelabelGlue,
            Command::StepDemo(_) => ExperimentKind::StepDemo,
            Command::Report(_) => return None,
        })
    }
}

/// Loads the config and applies the command-line overrides.
pub fn resolve(kind: ExperimentKind, args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    match cfg.kind {
        Some(k) if k != kind => bail!("config kind is {k} but the subcommand runs {kind}"),
        _ => cfg.kind = Some(kind),
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .context("out: no output directory (use --out or set out in the config)")?;
    cfg.out = Some(out.clone());
    cfg.validate()?;
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<()> {
    let kind = cli.command.kind();
    match cli.command {
        Command::Report(args) => report(&args),
        Command::Train(args)
        | Command::Subgroup(args)
        | Command::NoiseSweep(args)
        | Command::ExcludeIllusive(args)
        | Command::AdvEval(args)
        | Command::RelabelGlue(args)
        | Command::StepDemo(args) => {
            let (cfg, out) = resolve(kind.expect("experiment command"), &args)?;
            run_experiment(&cfg, args.data_dir.as_deref(), Some(&out))?;
            print_dir(&out)
        }
    }
}

const TABLES: [&str; 3] = ["metrics.csv", "adversarial.csv", "step.csv"];

fn print_dir(dir: &std::path::Path) -> Result<()> {
    let mut found = false;
    for name in TABLES {
        let path = dir.join(name);
        if path.exists() {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            println!("{}", render_table(&bytes)?);
            found = true;
        }
    }
    if !found {
        bail!("no report files in {}", dir.display());
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    print_dir(&args.out)
}
