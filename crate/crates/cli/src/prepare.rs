use std::path::PathBuf;

use clap::Args;
use hsr_core::data::{ingest, preprocess, split, synth_generate, write_dataset, InteractionData, Meta, SynthConfig};
use hsr_core::error::HsrError;
use hsr_core::objective::stream_rng;
use log::info;

use crate::{CmdResult, Common};

const PREPARE_STREAM: u64 = 0x70_72;

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Ratings file, lines `user item rating`.
    #[arg(long, required_unless_present = "synthetic", requires = "trust")]
    ratings: Option<PathBuf>,
    /// Trust file, lines `truster trustee`.
    #[arg(long)]
    trust: Option<PathBuf>,
    /// Generate a power-law dataset instead of reading files.
    #[arg(long, conflicts_with_all = ["ratings", "trust"])]
    synthetic: bool,
    #[arg(long, default_value_t = 2000)]
    users: usize,
    #[arg(long, default_value_t = 3000)]
    items: usize,
    /// Exponent of the out-degree law of the generated trust graph.
    #[arg(long, default_value_t = 2.5)]
    exponent: f64,
    /// Ratings at or above this are positives.
    #[arg(long)]
    threshold: Option<f64>,
    /// Add the reverse of every trust edge.
    #[arg(long)]
    symmetrize: bool,
}

const RATIOS: [f64; 3] = [7.0, 1.0, 2.0];

pub fn run(common: &Common, args: &PrepareArgs) -> CmdResult {
    let cfg = common.resolve(None, &[("threshold", args.threshold.map(|t| t.to_string()))])?;
    let outdir = common.outdir("data");
    let mut rng = stream_rng(cfg.seed, PREPARE_STREAM, 0);
    let mut meta = Meta::default();

    let (name, data) = if args.synthetic {
        let sc = SynthConfig::new(args.users, args.items, args.exponent);
        meta.set("source", "synthetic");
        meta.set("synthetic.exponent", args.exponent);
        ("synthetic".to_string(), synth_generate(&sc, &mut rng)?)
    } else {
        let (ratings, trust) = match (&args.ratings, &args.trust) {
            (Some(r), Some(t)) => (r, t),
            _ => return Err(HsrError::Input("--ratings and --trust are both required".into()).into()),
        };
        let (raw_r, raw_t) = ingest(ratings, trust)?;
        if raw_t.dropped > 0 {
            info!("dropped {} trust pairs naming unknown users", raw_t.dropped);
        }
        let data = preprocess(&raw_r, &raw_t, cfg.threshold, &mut rng)?;
        meta.set("source", ratings.display());
        meta.set("source.trust", trust.display());
        let name = ratings.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (name, split(data, RATIOS, &mut rng)?)
    };
    let data = if args.symmetrize { data.symmetrized() } else { data };

    meta.set("seed", cfg.seed);
    meta.set("threshold", cfg.threshold);
    meta.set("symmetrized", args.symmetrize);
    cfg.record_into(&mut meta);
    let meta = write_dataset(&outdir, &data, &meta)?;
    info!("wrote dataset to {}", outdir.display());
    print!("{}", table(&name, &data, &meta));
    Ok(())
}

fn table(name: &str, data: &InteractionData, meta: &Meta) -> String {
    let get = |k: &str| meta.get(k).unwrap_or("0").to_string();
    format!(
        "{:<12} {:>8} {:>8} {:>13} {:>10}\n{:<12} {:>8} {:>8} {:>13} {:>10}\nsplit train/val/test: {}/{}/{}\n",
        "dataset",
        "users",
        "items",
        "interactions",
        "relations",
        name,
        data.num_users,
        data.num_items,
        data.num_positives(),
        data.social.num_edges(),
        get("num_train"),
        get("num_val"),
        get("num_test"),
    )
}
