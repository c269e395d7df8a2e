use std::path::PathBuf;

use clap::Args;
use hsr_core::data::{read_dataset, SplitTag};
use hsr_core::error::HsrError;
use hsr_core::eval::report::{attention_csv, bins_csv, hierarchy_csv, metrics_csv, write_text};
use hsr_core::eval::{attention_export, bin_reports, hierarchy_analysis, EvalOptions, Evaluation, DEFAULT_NEGATIVES, DEFAULT_THRESHOLD};
use hsr_core::model::{Checkpoint, Model};
use log::info;

use crate::train::CONFIG_SIDECAR;
use crate::{create_dir, CmdResult, Common};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also report metrics per sparsity bin.
    #[arg(long, value_name = "N")]
    bins: Option<usize>,
    /// Also report out-degree per embedding-norm group.
    #[arg(long, value_name = "GROUPS", num_args = 0..=1, default_missing_value = "4")]
    hierarchy: Option<usize>,
    /// Export first-layer attention of this user over its test items.
    #[arg(long, value_name = "USER")]
    attention: Option<usize>,
    /// Candidate-sampling repeats for top-K metrics.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    negatives: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    accuracy_threshold: f64,
    /// Aggregate neighbors by sequential Möbius addition.
    #[arg(long)]
    exact_agg: bool,
}

pub fn run(common: &Common, args: &EvalArgs) -> CmdResult {
    let sidecar = args.checkpoint.parent().map(|d| d.join(CONFIG_SIDECAR));
    let cfg = common.resolve(sidecar.as_deref(), &[])?;
    let (data, _) = read_dataset(&args.dataset)?;
    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let model_cfg = ckpt.model_config(&cfg.model_config())?;
    let h = &ckpt.header;
    if h.num_users as usize != data.num_users || h.num_items as usize != data.num_items {
        return Err(HsrError::Compat(format!(
            "checkpoint has {} users / {} items, dataset has {} / {}",
            h.num_users, h.num_items, data.num_users, data.num_items
        ))
        .into());
    }
    let params = ckpt.into_params(cfg.geometry)?;
    let model = Model::new(&params, &data.social, &model_cfg)?.with_exact_aggregation(args.exact_agg)?;

    let options = EvalOptions {
        negatives: args.negatives,
        threshold: args.accuracy_threshold,
        repeats: args.repeats,
        seed: cfg.seed,
        ..EvalOptions::default()
    };
    let evaluation = Evaluation::run(&model, &data, &options)?;
    let outdir = common.outdir("eval");
    create_dir(&outdir)?;
    let metrics = metrics_csv(&evaluation.report());
    write_text(&outdir.join("metrics.csv"), &metrics)?;
    print!("{metrics}");

    if let Some(n) = args.bins {
        write_text(&outdir.join("bins.csv"), &bins_csv(&bin_reports(&evaluation, &data, n)?))?;
    }
    if let Some(g) = args.hierarchy {
        let groups = hierarchy_analysis(&params, model.space(), &data.social, g)?;
        write_text(&outdir.join("hierarchy.csv"), &hierarchy_csv(&groups))?;
    }
    if let Some(user) = args.attention {
        let mut items: Vec<usize> = data
            .records_in(SplitTag::Test)
            .filter(|r| r.user == user)
            .map(|r| r.item)
            .collect();
        if items.is_empty() {
            items = data.records.iter().filter(|r| r.user == user).map(|r| r.item).collect();
        }
        let export = attention_export(&model, user, &items)?;
        write_text(&outdir.join(format!("attention_{user}.csv")), &attention_csv(&export))?;
    }
    info!("wrote reports to {}", outdir.display());
    Ok(())
}
