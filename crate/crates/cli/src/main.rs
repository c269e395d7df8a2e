use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsr_core::config::{Source, TrainConfig};
use hsr_core::error::HsrError;
use log::error;

mod check;
mod eval;
mod prepare;
mod train;

#[derive(Parser, Debug)]
#[command(name = "hsr", version, about = "Hyperbolic social recommendation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file of `key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives fully deterministic output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Override any config key, e.g. `--set dim=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn rating and trust files (or a synthetic sample) into a dataset directory.
    Prepare(prepare::PrepareArgs),
    /// Train on a prepared dataset and write a checkpoint.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(eval::EvalArgs),
    /// Run numerical self-checks.
    Check(check::CheckArgs),
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Hsr(HsrError),
    Checks(usize),
}

impl From<HsrError> for Failure {
    fn from(e: HsrError) -> Self {
        Failure::Hsr(e)
    }
}

pub type CmdResult = Result<(), Failure>;

fn exit_code(e: &HsrError) -> u8 {
    match e {
        HsrError::Compat(_) => 3,
        HsrError::Numeric(_) | HsrError::UndefinedMetric(_) => 4,
        HsrError::Usage(_) | HsrError::Parse { .. } | HsrError::Input(_) | HsrError::Io { .. } => 2,
    }
}

impl Common {
    /// Defaults, then `sidecar` (a config written next to a checkpoint), then
    /// `--config`, then flags.
    pub fn resolve(&self, sidecar: Option<&Path>, overrides: &[(&str, Option<String>)]) -> Result<TrainConfig, HsrError> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = sidecar.filter(|p| p.exists()) {
            cfg.apply_text(&read_text(p)?, &p.display().to_string(), Source::File)?;
        }
        if let Some(p) = &self.config {
            cfg.apply_text(&read_text(p)?, &p.display().to_string(), Source::File)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HsrError::Input(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim(), Source::Flag)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string(), Source::Flag)?;
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, v, Source::Flag)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn outdir(&self, fallback: &str) -> PathBuf {
        self.outdir.clone().unwrap_or_else(|| PathBuf::from(fallback))
    }
}

pub fn read_text(path: &Path) -> Result<String, HsrError> {
    std::fs::read_to_string(path).map_err(|e| HsrError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), HsrError> {
    std::fs::create_dir_all(path).map_err(|e| HsrError::Input(format!("cannot create {}: {e}", path.display())))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HSR_LOG", "info"))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            error!("--threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Prepare(a) => prepare::run(&cli.common, a),
        Command::Train(a) => train::run(&cli.common, a),
        Command::Eval(a) => eval::run(&cli.common, a),
        Command::Check(a) => check::run(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Hsr(e)) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(n)) => {
            error!("{n} check suite(s) failed");
            ExitCode::from(1)
        }
    }
}
