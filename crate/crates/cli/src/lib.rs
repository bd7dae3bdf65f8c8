//! Command-line pipelines: ground truth, data generation, neural training,
//! loss ablation, reward shaping and reporting.

pub mod config;
pub mod error;
pub mod pipeline;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Config;
pub use error::CliError;
pub use pipeline::Ctx;

#[derive(Debug, Parser)]
#[command(name = "drogo", version, about = "Learn log DR eigenvectors and use them as shaping potentials")]
pub struct Cli {
    /// Config file (`key = value` lines under `[section]` headers); a manifest works too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run a single seed instead of experiment.seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the bundled layouts.
    Layouts,
    /// Closed-form log eigenvector, DR matrix, SR eigenvector and checks.
    GroundTruth(Overrides),
    /// Sample the uniform transition datasets.
    GenData(Overrides),
    /// Train the configured loss for every encoder and seed.
    Train(Overrides),
    /// Compare all losses on one encoder.
    Ablate(Overrides),
    /// Q-learning with NS, SR and DR potentials.
    Shape(Overrides),
    /// Aggregate outputs into a plain-text report.
    Report(Overrides),
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Setting overrides: `--section.key=value`, `--section.key value` or `key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    pub settings: Vec<String>,
}

/// Pairs `--key value` tokens into `key=value`.
pub fn normalize_overrides(raw: &[String]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(tok) = it.next() {
        let key = tok.trim_start_matches("--");
        if key.contains('=') {
            out.push(key.to_string());
        } else {
            let value = it.next().ok_or_else(|| CliError::Usage(format!("setting {tok:?} has no value")))?;
            out.push(format!("{key}={value}"));
        }
    }
    Ok(out)
}

/// Builds the resolved config for `cli`, applying `--seed` last.
pub fn context(cli: &Cli) -> Result<Ctx, CliError> {
    let settings = match &cli.command {
        Command::Layouts => Vec::new(),
        Command::GroundTruth(o)
        | Command::GenData(o)
        | Command::Train(o)
        | Command::Ablate(o)
        | Command::Shape(o)
        | Command::Report(o) => normalize_overrides(&o.settings)?,
    };
    let text = match &cli.config {
        Some(p) => Some(
            fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut cfg = config::resolve(text.as_deref(), &settings)?;
    if let Some(s) = cli.seed {
        cfg.set(&format!("experiment.seeds={s}"))?;
    }
    cfg.seeds()?;
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(Ctx::new(cfg, cli.out.clone(), cli.jobs))
}

/// Runs one parsed invocation and returns the text for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    if let Command::Layouts = cli.command {
        return pipeline::layouts();
    }
    let ctx = context(cli)?;
    let exp = ctx.exp_dir()?;
    match cli.command {
        Command::Layouts => unreachable!(),
        Command::GroundTruth(_) => {
            let reports = pipeline::ground_truth(&ctx)?;
            let mut s = String::from("layout,route_abs_cosine,min_entry,terminal_eigenvalue,expected\n");
            for r in reports {
                s += &format!(
                    "{},{},{},{},{}\n",
                    r.layout, r.route_cosine, r.min_entry, r.smallest_eigenvalue, r.expected_eigenvalue
                );
            }
            Ok(s)
        }
        Command::GenData(_) => {
            let paths = pipeline::gen_data(&ctx)?;
            Ok(paths.iter().map(|p| format!("{}\n", p.display())).collect())
        }
        Command::Train(_) => {
            pipeline::train(&ctx)?;
            Ok(format!("{}\n", exp.display()))
        }
        Command::Ablate(_) => {
            pipeline::ablate(&ctx)?;
            Ok(format!("{}\n", exp.display()))
        }
        Command::Shape(_) => {
            pipeline::shape(&ctx)?;
            Ok(format!("{}\n", exp.display()))
        }
        Command::Report(_) => pipeline::report(&ctx),
    }
}

/// Parses `args` (including the program name) and runs; clap's own help and
/// version output count as success.
pub fn run_from<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) if !e.use_stderr() => Ok(e.to_string()),
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}
