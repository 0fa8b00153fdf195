use std::path::PathBuf;

use clap::{Args as ClapArgs, ValueEnum};
use qapseg::data::Split;
use qapseg::metrics::{Averaging, ConfusionMatrix, MetricReport};
use qapseg::model::load_checkpoint;
use qapseg::training::confusion;
use serde::Serialize;

use crate::config::{DataConfig, RunConfig};
use crate::dataset::load_splits;
use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, write_json, write_text, Format, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Take the dataset and seed from a run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Leave class 0 out of the macro averages.
    #[arg(long)]
    pub exclude_background: bool,
    /// Row label; defaults to the checkpoint file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Directory for metrics, confusion matrix and report; must be absent or empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn metrics_header() -> Vec<&'static str> {
    MetricReport::CSV_HEADER.split(',').collect()
}

pub fn metrics_row(name: &str, r: &MetricReport) -> Vec<String> {
    r.csv_row(name).split(',').map(str::to_string).collect()
}

pub fn confusion_table(cm: &ConfusionMatrix) -> Table {
    let k = cm.num_classes();
    let mut t =
        Table::new(std::iter::once("truth\\pred".to_string()).chain((0..k).map(|c| c.to_string())));
    for r in 0..k {
        t.push(
            std::iter::once(r.to_string())
                .chain((0..k).map(|p| cm.get(r, p).to_string()))
                .collect(),
        );
    }
    t
}

pub fn run(args: Args, format: Format) -> CliResult<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (mut data, mut seed) = match &args.config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            (c.data, c.seed)
        }
        None => (
            DataConfig {
                synthetic: None,
                ..DataConfig::default()
            },
            0,
        ),
    };
    if args.synthetic.is_some() && args.manifest.is_some() {
        return Err(CliError::config(
            "--synthetic and --manifest are mutually exclusive",
        ));
    }
    if let Some(n) = args.synthetic {
        data.synthetic = Some(n);
        data.manifest = None;
    }
    if let Some(p) = &args.manifest {
        data.manifest = Some(p.clone());
        data.synthetic = None;
    }
    if data.synthetic.is_none() && data.manifest.is_none() {
        return Err(CliError::config(
            "no dataset: pass --synthetic N, --manifest PATH or --config",
        ));
    }
    if let Some(s) = args.seed {
        seed = s;
    }
    let (h, w) = model.config().input_size;
    if h != w {
        return Err(CliError::config(format!(
            "checkpoint expects non-square {h}x{w} input"
        )));
    }
    data.size = h;
    let splits = load_splits(&data, seed)?;
    let samples = match args.split {
        SplitArg::Train => splits.get(Split::Train).to_vec(),
        SplitArg::Val => splits.get(Split::Val).to_vec(),
        SplitArg::Test => splits.get(Split::Test).to_vec(),
        SplitArg::All => splits.all(),
    };
    if samples.is_empty() {
        return Err(CliError::config(format!(
            "the {:?} split is empty",
            args.split
        )));
    }
    let cm = confusion(&model, &samples, 16)?;
    let averaging = if args.exclude_background {
        Averaging::ExcludeBackground
    } else {
        Averaging::AllClasses
    };
    let report = cm.report(averaging);
    let name = args.name.clone().unwrap_or_else(|| {
        args.checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let mut t = Table::new(metrics_header());
    t.push(metrics_row(&name, &report));
    print!("{}", t.render(format));

    if let Some(dir) = &args.out {
        prepare_out_dir(dir)?;
        #[derive(Serialize)]
        struct Effective<'a> {
            args: &'a Args,
            data: &'a DataConfig,
            seed: u64,
        }
        write_json(
            &dir.join("config.json"),
            &Effective {
                args: &args,
                data: &data,
                seed,
            },
        )?;
        write_text(&dir.join("metrics.csv"), &t.to_csv())?;
        write_text(&dir.join("confusion.csv"), &confusion_table(&cm).to_csv())?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}
