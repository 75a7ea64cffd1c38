use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use fharmonic::runner::{exit_code, report_json, run, summary_csv, write_reports};
use fharmonic::scenario::parse_config;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Run F-harmonic map scenarios from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "fharmonic", version)]
struct Args {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for `<name>.report.json` files and `summary.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the report printed to stdout.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Print scenario names and exit.
    #[arg(long)]
    list: bool,
    /// Run only the named scenario.
    #[arg(long)]
    only: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut scenarios = match parse_config(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.list {
        for s in &scenarios {
            println!("{}", s.name);
        }
        return ExitCode::SUCCESS;
    }
    if let Some(only) = &args.only {
        scenarios.retain(|s| &s.name == only);
        if scenarios.is_empty() {
            eprintln!("error: no scenario named {only:?}");
            return ExitCode::from(2);
        }
    }

    let reports = run(&scenarios);
    if let Some(dir) = &args.out {
        if let Err(e) = write_reports(dir, &reports) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let printed = match args.format {
        Format::Json => reports
            .iter()
            .map(report_json)
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.concat()),
        Format::Csv => summary_csv(&reports),
    };
    match printed {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(exit_code(&reports) as u8)
}
