use std::path::PathBuf;

use clap::Args as ClapArgs;
use qapseg::metrics::Averaging;
use qapseg::training::confusion;
use qapseg::AblationFlags;
use serde::Serialize;

use super::train::train_into;
use super::RunArgs;
use crate::dataset::load_splits;
use crate::error::CliResult;
use crate::output::{prepare_out_dir, write_json, write_text, Format, Table};

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[command(flatten)]
    pub run: RunArgs,
    /// Leave class 0 out of the macro averages.
    #[arg(long)]
    pub exclude_background: bool,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    pub out: PathBuf,
}

fn mark(on: bool) -> String {
    if on { "✓" } else { "" }.to_string()
}

pub fn run(args: Args, format: Format) -> CliResult<()> {
    let base = args.run.resolve(None)?;
    let splits = load_splits(&base.data, base.seed)?;
    let eval_set = if splits.test.is_empty() {
        &splits.val
    } else {
        &splits.test
    };
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &base)?;
    let averaging = if args.exclude_background {
        Averaging::ExcludeBackground
    } else {
        Averaging::AllClasses
    };

    let mut t = Table::new([
        "139",
        "124",
        "max",
        "avg",
        "params",
        "best_epoch",
        "miou",
        "acc",
        "pre",
        "sen",
        "spe",
        "dice",
    ]);
    for flags in AblationFlags::ablation_rows() {
        let mut cfg = base.clone();
        cfg.model.flags = flags;
        let dir = args
            .out
            .join(format!("run_{}", flags.to_string().replace('+', "_")));
        prepare_out_dir(&dir)?;
        write_json(&dir.join("config.json"), &cfg)?;
        log::info!("ablation row {flags}");
        let out = train_into(&cfg, &splits, &dir)?;
        let r = confusion(&out.best, eval_set, cfg.train.batch_size)?.report(averaging);
        t.push(vec![
            mark(flags.atrous_139),
            mark(flags.atrous_124),
            mark(flags.pool_max),
            mark(flags.pool_avg),
            out.best.parameter_count().to_string(),
            out.best_epoch.to_string(),
            format!("{:.4}", r.iou.macro_avg),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.precision.macro_avg),
            format!("{:.4}", r.sensitivity.macro_avg),
            format!("{:.4}", r.specificity.macro_avg),
            format!("{:.4}", r.dice.macro_avg),
        ]);
    }
    write_text(&args.out.join("ablation.csv"), &t.to_csv())?;
    print!("{}", t.render(format));
    Ok(())
}
