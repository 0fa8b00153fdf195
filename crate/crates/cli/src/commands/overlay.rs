use std::path::PathBuf;

use clap::Args as ClapArgs;
use qapseg::data::{
    load_pgm, normalize_resize, overlay_counts, render_overlay, write_overlay, Normalization,
    Sample, NUM_CLASSES,
};
use qapseg::model::{argmax_channels, load_checkpoint};
use qapseg::Tensor;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{Format, Table};

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    /// Ground-truth mask (PGM, class ids).
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted mask (PGM, class ids).
    #[arg(long, conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Predict the mask from `--image` with this checkpoint.
    #[arg(long, requires = "image")]
    pub checkpoint: Option<PathBuf>,
    /// Source slice (PGM); true negatives show it in grey.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = NUM_CLASSES)]
    pub classes: usize,
    /// Output PPM path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args, format: Format) -> CliResult<()> {
    let truth_grid = load_pgm(&args.truth)?;
    let (w, h) = (truth_grid.width, truth_grid.height);
    let truth = truth_grid.to_mask()?;
    let image = match &args.image {
        Some(p) => {
            let g = load_pgm(p)?;
            if (g.width, g.height) != (w, h) {
                return Err(CliError::config(format!(
                    "image is {}x{} but mask is {w}x{h}",
                    g.width, g.height
                )));
            }
            Some(g.to_unit())
        }
        None => None,
    };
    let pred = match (&args.pred, &args.checkpoint) {
        (Some(p), None) => {
            let g = load_pgm(p)?;
            if (g.width, g.height) != (w, h) {
                return Err(CliError::config(format!(
                    "prediction is {}x{} but mask is {w}x{h}",
                    g.width, g.height
                )));
            }
            g.to_mask()?
        }
        (None, Some(c)) => {
            let model = load_checkpoint(c)?;
            let img = image
                .as_ref()
                .expect("clap requires --image with --checkpoint");
            let raw = Sample::new("overlay", w, h, img.clone(), truth.clone())?;
            let s = normalize_resize(&raw, w.max(h), Normalization::MinMax)?;
            let x = Tensor::new([1, 1, h, w], s.image)?;
            argmax_channels(&model.forward(&x)?)
        }
        _ => {
            return Err(CliError::config(
                "pass exactly one of --pred or --checkpoint",
            ))
        }
    };
    if args.out.exists() {
        return Err(CliError::config(format!(
            "{} already exists",
            args.out.display()
        )));
    }
    let img = render_overlay(&pred, &truth, image.as_deref(), w, h, args.classes)?;
    write_overlay(&img, &args.out)?;
    let mut t = Table::new(["class", "tp", "fp", "fn"]);
    for (i, c) in overlay_counts(&img, args.classes - 1)?
        .into_iter()
        .enumerate()
    {
        t.push(vec![
            (i + 1).to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
        ]);
    }
    print!("{}", t.render(format));
    Ok(())
}
