use std::path::PathBuf;

use clap::Args as ClapArgs;
use qapseg::data::{synth_phantoms, write_dataset};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, write_json, Format};

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    /// Number of phantoms.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Side length in pixels (at least 32).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args, _format: Format) -> CliResult<()> {
    if args.size < 32 {
        return Err(CliError::config(format!(
            "--size must be at least 32, got {}",
            args.size
        )));
    }
    if args.n == 0 {
        return Err(CliError::config("--n must be positive"));
    }
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &args)?;
    let samples: Vec<_> = synth_phantoms(args.n, args.size, args.seed)
        .into_iter()
        .map(|s| (s, None))
        .collect();
    write_dataset(&samples, &args.out)?;
    println!("wrote {} samples to {}", args.n, args.out.display());
    Ok(())
}
