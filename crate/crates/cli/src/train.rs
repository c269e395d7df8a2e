use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use hsr_core::data::{read_dataset, Meta};
use hsr_core::error::HsrError;
use hsr_core::eval::report::write_text;
use hsr_core::model::Checkpoint;
use hsr_core::train::{train, EpochLog, StopReason};
use log::{info, warn};

use crate::{create_dir, CmdResult, Common};

pub const CHECKPOINT: &str = "checkpoint.hsr";
pub const CONFIG_SIDECAR: &str = "config.txt";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// `hyperbolic` (HSR) or `euclidean` (ESR).
    #[arg(long)]
    geometry: Option<String>,
    /// `on` or `mean` (the -A variants).
    #[arg(long)]
    attention: Option<String>,
    /// Social loss weight; 0 gives the -S variants.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn run(common: &Common, args: &TrainArgs) -> CmdResult {
    let overrides = [
        ("geometry", args.geometry.clone()),
        ("attention", args.attention.clone()),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
    ];
    let cfg = common.resolve(None, &overrides)?;
    let (data, _) = read_dataset(&args.dataset)?;
    let outdir = common.outdir("run");
    create_dir(&outdir)?;

    let mut meta = Meta::default();
    meta.set("dataset", args.dataset.display());
    cfg.record_into(&mut meta);
    write_text(&outdir.join("meta"), &meta.render())?;
    write_text(&outdir.join(CONFIG_SIDECAR), &cfg.render())?;

    let log_path = outdir.join("train_log.csv");
    let io_err = |e: std::io::Error| HsrError::Input(format!("cannot write {}: {e}", log_path.display()));
    let mut log = std::fs::File::create(&log_path).map_err(io_err)?;
    writeln!(log, "{}", EpochLog::CSV_HEADER).map_err(io_err)?;
    let mut log_error = None;
    let outcome = train(&data, &cfg, |row| {
        info!(
            "epoch {}: loss {:.4} val_auc {}",
            row.epoch,
            row.train_loss,
            row.val_auc.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        if log_error.is_none() {
            log_error = writeln!(log, "{}", row.csv_row()).err();
        }
    })?;
    if let Some(e) = log_error {
        return Err(io_err(e).into());
    }

    let model_cfg = cfg.model_config();
    Checkpoint::new(&model_cfg, outcome.params)?.write(&outdir.join(CHECKPOINT))?;
    match (&outcome.stop, outcome.failure) {
        (StopReason::NumericFailure, Some(e)) => {
            warn!("training aborted; {} holds the last good parameters", CHECKPOINT);
            Err(e.into())
        }
        _ => {
            println!(
                "best epoch {} val_auc {} ({:?})",
                outcome.best_epoch,
                outcome.best_val_auc.map_or("-".to_string(), |a| a.to_string()),
                outcome.stop
            );
            Ok(())
        }
    }
}
