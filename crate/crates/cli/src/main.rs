use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use nucpol_cli::config::{Format, Mode, RunConfig};
use nucpol_cli::run::{execute, fingerprint, metadata_json, metadata_path, Metadata, VERSION};
use nucpol_cli::CliError;

/// Nuclear spin polarization by repeated electron-spin measurement.
#[derive(Parser, Debug)]
#[command(name = "nucpol", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    #[arg(long, value_enum)]
    mode: Option<Mode>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output file; stdout when absent (no metadata sidecar is written then).
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum)]
    format: Option<Format>,

    /// Worker threads for sector-parallel work.
    #[arg(long)]
    threads: Option<usize>,

    #[arg(long)]
    verbose: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let start = Instant::now();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.output = Some(o);
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    let warnings = cfg.validate()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if args.verbose {
        eprintln!(
            "nucpol {VERSION}: mode {:?}, K = {}, fingerprint {}",
            cfg.mode,
            cfg.K,
            fingerprint(&cfg)
        );
    }

    let out = execute(&cfg)?;
    match &cfg.output {
        None => print!("{}", out.body),
        Some(path) => {
            let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
            std::fs::write(path, &out.body).map_err(io)?;
            let meta = Metadata {
                fingerprint: fingerprint(&cfg),
                version: VERSION.into(),
                mode: cfg.mode,
                seed: cfg.seed,
                wall_time_s: start.elapsed().as_secs_f64(),
                warnings,
                summary: out.summary,
            };
            std::fs::write(metadata_path(path), metadata_json(&meta)).map_err(io)?;
        }
    }
    if args.verbose {
        eprintln!("done in {:.3} s", start.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.category(), "message": e.to_string() })
            );
            ExitCode::from(e.exit_code())
        }
    }
}
