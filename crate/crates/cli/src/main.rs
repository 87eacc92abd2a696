mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use commands::{Failure, Payload, SeedOutcome};
use config::{Format, RunConfig, SpaceTag};

/// Simulator and spectral analyzer for cooperative linear random delay systems.
#[derive(Parser, Debug)]
#[command(name = "floquet-sep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `outputs.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run the single driver seed K instead of the configured list.
    #[arg(long, global = true, value_name = "K")]
    seed_override: Option<u64>,
    /// Phase space norm: C, Lp, L1 or AC.
    #[arg(long, global = true, value_name = "SPACE")]
    space: Option<SpaceTag>,
    /// Only errors on the terminal.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Trajectory CSV from the configured initial segment.
    Simulate,
    /// Cooperativity, irreducibility, focusing constants and sandwich table.
    VerifyAssumptions,
    /// Top Lyapunov exponent by forward iteration.
    Lyapunov,
    /// Principal Floquet direction by pullback.
    Floquet,
    /// Exponents, separation rate, temperedness and kernel census.
    Separation,
    /// Certified reference values for systems that have one.
    Oracle,
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("FLOQUET_SEP_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(Failure::Schema(format!("FLOQUET_SEP_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Schema("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(space) = cli.space {
        cfg.system.space = space;
    }
    if let Some(seed) = cli.seed_override {
        cfg.numerics.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.outputs.directory = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outcome(dir: &Path, formats: &[Format], outcome: &SeedOutcome) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Schema(format!("cannot write to {}: {e}", dir.display()));
    for art in &outcome.artifacts {
        let (ext, bytes) = match &art.payload {
            Payload::Csv(t) if formats.contains(&Format::Csv) => {
                ("csv", t.to_bytes().map_err(|e| Failure::Numerical(e.to_string()))?)
            }
            Payload::Json(b) if formats.contains(&Format::Json) => ("json", b.clone()),
            _ => continue,
        };
        std::fs::write(dir.join(format!("{}.{ext}", art.stem)), bytes).map_err(io)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load(cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_cap()? {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Failure::Numerical(e.to_string()))?;
    let task = match cli.command {
        Command::Simulate => commands::simulate,
        Command::VerifyAssumptions => commands::verify_assumptions,
        Command::Lyapunov => commands::lyapunov,
        Command::Floquet => commands::floquet,
        Command::Separation => commands::separation,
        Command::Oracle => commands::oracle,
    };
    let seeds = cfg.seeds();
    let results: Vec<(u64, Result<SeedOutcome, Failure>)> =
        pool.install(|| seeds.par_iter().map(|&s| (s, task(&cfg, s))).collect());

    let dir = &cfg.outputs.directory;
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Schema(format!("cannot create output directory {}: {e}", dir.display())))?;
    let mut code = 0;
    for (seed, result) in results {
        match result {
            Ok(outcome) => {
                write_outcome(dir, &cfg.outputs.formats, &outcome)?;
                if !cli.quiet {
                    println!("{}", outcome.headline);
                }
                code = code.max(outcome.code);
            }
            Err(f) => {
                eprintln!("seed {seed}: {}", f.message());
                code = code.max(f.code());
            }
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
