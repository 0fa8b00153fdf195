use std::path::PathBuf;

use clap::Args as ClapArgs;
use qapseg::dilation::{rank_schedules, render_coverage, DilationSchedule, ScheduleReport};
use serde::Serialize;

use crate::error::CliResult;
use crate::output::{prepare_out_dir, write_json, write_text, Format, Table};

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    /// Kernel size.
    #[arg(long, default_value_t = 3)]
    pub f: usize,
    /// Number of serial layers.
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Largest rate to enumerate.
    #[arg(long, default_value_t = 9)]
    pub max_rate: usize,
    /// Only print the best N schedules.
    #[arg(long)]
    pub top: Option<usize>,
    /// Report these schedules instead of enumerating (repeatable).
    #[arg(long = "schedule", value_name = "R1,R2,..")]
    pub schedules: Vec<String>,
    /// Write a coverage picture of this schedule (PPM and text).
    #[arg(long, value_name = "R1,R2,..")]
    pub render: Option<String>,
    /// Pixel size of one cell in the rendered PPM.
    #[arg(long, default_value_t = 8)]
    pub cell: usize,
    /// Directory for renders, the report and the effective config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn report_table(reports: &[ScheduleReport]) -> Table {
    let mut t = Table::new([
        "schedule",
        "rf_paper",
        "rf_oracle",
        "un_paper",
        "uncovered_oracle",
        "er",
        "er_oracle",
        "geometric",
    ]);
    for r in reports {
        let rates: Vec<String> = r.schedule.rates().iter().map(ToString::to_string).collect();
        t.push(vec![
            format!("[{}]", rates.join(" ")),
            r.rf_paper.to_string(),
            r.rf_oracle.to_string(),
            r.un_paper.to_string(),
            r.uncovered_oracle.to_string(),
            format!("{:.4}", r.er),
            format!("{:.4}", r.er_oracle),
            r.geometric.to_string(),
        ]);
    }
    t
}

pub fn run(args: Args, format: Format) -> CliResult<()> {
    if args.render.is_some() && args.out.is_none() {
        return Err(crate::error::CliError::config("--render needs --out DIR"));
    }
    let mut reports = if args.schedules.is_empty() {
        rank_schedules(args.f, args.layers, args.max_rate)?
    } else {
        args.schedules
            .iter()
            .map(|s| Ok(ScheduleReport::new(DilationSchedule::parse(args.f, s)?)))
            .collect::<CliResult<Vec<_>>>()?
    };
    if let Some(n) = args.top {
        reports.truncate(n);
    }
    let table = report_table(&reports);
    print!("{}", table.render(format));

    if let Some(dir) = &args.out {
        prepare_out_dir(dir)?;
        write_json(&dir.join("config.json"), &args)?;
        write_text(&dir.join("report.csv"), &table.to_csv())?;
        if let Some(spec) = &args.render {
            let sched = DilationSchedule::parse(args.f, spec)?;
            let grid = render_coverage(&sched)?;
            let stem = format!(
                "coverage_{}",
                sched
                    .rates()
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("-")
            );
            let ppm = dir.join(format!("{stem}.ppm"));
            std::fs::write(&ppm, grid.to_ppm(args.cell.max(1))).map_err(|e| qapseg::Error::Io {
                path: ppm.clone(),
                source: e,
            })?;
            write_text(&dir.join(format!("{stem}.txt")), &grid.to_ascii())?;
            eprintln!("{}", grid.to_ascii().trim_end());
            eprintln!("wrote {}", ppm.display());
        }
    }
    Ok(())
}
