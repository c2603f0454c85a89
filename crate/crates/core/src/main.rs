use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lcft_lab::cli::{parse_config, run_experiment};
use lcft_lab::mc::with_workers;

/// Run one experiment described by a TOML config.
#[derive(Parser, Debug)]
#[command(name = "lcft-lab", version)]
struct Args {
    /// Experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `mc.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for the report and tables; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = args.seed {
        cfg.mc.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.mc.workers = w;
    }
    let out = args.out.or_else(|| cfg.output.dir.clone());
    match with_workers(cfg.mc.workers, || run_experiment(&cfg, out.as_deref())) {
        Ok(report) => {
            println!("{}", report.to_json());
            for n in &report.notes {
                eprintln!("{n}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
