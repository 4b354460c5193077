//! `rfdd`: run a double-descent sweep described by a TOML config.
//!
//! Exit codes: 0 on success, 2 when the config cannot be read or is
//! invalid, 3 when some theory points or simulated trials failed (the
//! output is still written).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rfdd_core::experiment::{run, to_csv, to_jsonl, Engine, ExperimentConfig, OutputFormat};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Theory,
    Empirical,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(name = "rfdd", version, about = "Theory curves and simulations for random-feature models")]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Which engine to run; overrides the config.
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Output file; overrides the config. Without either, rows go to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format; overrides the config.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads (0 uses one per core).
    #[arg(long, default_value_t = 0, value_name = "N")]
    workers: usize,
    /// Master seed; overrides the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rfdd: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.engine {
        cfg.engine = match e {
            EngineArg::Theory => Engine::Theory,
            EngineArg::Empirical => Engine::Empirical,
            EngineArg::Both => Engine::Both,
        };
    }
    if let Some(f) = args.format {
        cfg.output.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        };
    }
    if let Some(p) = args.out {
        cfg.output.path = Some(p);
    }

    let res = match run(&cfg, args.workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("rfdd: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    for w in &res.warnings {
        eprintln!("rfdd: warning: {w}");
    }
    let text = match cfg.output.format {
        OutputFormat::Csv => to_csv(&res, &cfg),
        OutputFormat::Jsonl => to_jsonl(&res, &cfg),
    };
    let written = match &cfg.output.path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("rfdd: {e}");
        return ExitCode::FAILURE;
    }
    if res.has_failures() {
        eprintln!(
            "rfdd: {} theory point(s) and {} trial(s) failed; see the status and trials_failed columns",
            res.theory_failures, res.trial_failures
        );
        return ExitCode::from(EXIT_PARTIAL);
    }
    ExitCode::SUCCESS
}
