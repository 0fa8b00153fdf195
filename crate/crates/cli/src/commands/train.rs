use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use qapseg::model::save_checkpoint;
use qapseg::training::{log_csv, train_with, TrainOutcome};
use qapseg::Model;
use serde::Serialize;

use super::{parse_flags, RunArgs};
use crate::config::RunConfig;
use crate::dataset::{load_splits, Splits};
use crate::error::CliResult;
use crate::output::{prepare_out_dir, write_json, write_text, Format, Table};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[command(flatten)]
    pub run: RunArgs,
    /// Add-on networks: `all`, `none`, or e.g. `124+139+max`.
    #[arg(long)]
    pub flags: Option<String>,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    pub out: PathBuf,
}

/// Train on `splits` per `cfg`, writing the log (rewritten after every epoch)
/// and the best checkpoint into `dir`.
pub fn train_into(cfg: &RunConfig, splits: &Splits, dir: &Path) -> CliResult<TrainOutcome> {
    let model = Model::build(cfg.model.clone(), cfg.seed)?;
    log::info!("{} parameters", model.parameter_count());
    let log_path = dir.join(LOG_FILE);
    let mut records = Vec::new();
    let out = train_with(model, &splits.train, &splits.val, &cfg.train, |rec, _| {
        records.push(*rec);
        std::fs::write(&log_path, log_csv(&records)).map_err(|e| qapseg::Error::Io {
            path: log_path.clone(),
            source: e,
        })
    })?;
    write_text(&log_path, &log_csv(&out.records))?;
    save_checkpoint(&out.best, dir.join(CHECKPOINT_FILE))?;
    Ok(out)
}

pub fn run(args: Args, format: Format) -> CliResult<()> {
    let flags = args.flags.as_deref().map(parse_flags).transpose()?;
    let cfg = args.run.resolve(flags)?;
    let splits = load_splits(&cfg.data, cfg.seed)?;
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    let out = train_into(&cfg, &splits, &args.out)?;

    let mut t = Table::new([
        "epochs",
        "best_epoch",
        "best_val_dice",
        "params",
        "checkpoint",
    ]);
    t.push(vec![
        out.records.len().to_string(),
        out.best_epoch.to_string(),
        format!("{:.4}", out.best_val_dice),
        out.best.parameter_count().to_string(),
        args.out.join(CHECKPOINT_FILE).display().to_string(),
    ]);
    print!("{}", t.render(format));
    Ok(())
}
