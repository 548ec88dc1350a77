use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use qattn_cli::{
    bench, generate, render_csv, run_record, verify, BenchArgs, GenerateArgs, Grid, THREADS_ENV,
};
use qattn_core::{Instance, Method, Mode};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;

#[derive(Parser)]
#[command(
    name = "qattn",
    version,
    about = "Threshold-sparse attention experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded (tau, k, eta)-good instance and print its goodness report.
    Generate {
        #[arg(long)]
        n: usize,
        /// Embedding dimension for random_embed; gram_exact always uses d = n.
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Defaults to 2 ln n.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "gram_exact")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one method on an instance and print a JSON record.
    Run {
        instance: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the record here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify every error bound on an instance; exit 2 if any fails.
    Verify { instance: PathBuf },
    /// Sweep a grid of sizes and methods and emit CSV.
    Bench {
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "random_embed")]
        mode: Mode,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    Ok(())
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Generate {
            n,
            d,
            k,
            tau,
            eta,
            seed,
            mode,
            out,
        } => {
            let (inst, report) = generate(&GenerateArgs {
                n,
                d,
                k,
                tau,
                eta,
                seed,
                mode,
            })?;
            inst.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Run {
            instance,
            method,
            seed,
            out,
        } => {
            let inst = Instance::load(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let record = run_record(&inst, method, seed)?;
            let line = serde_json::to_string(&record)? + "\n";
            if let Some(path) = &out {
                write_output(Some(path), &line)?;
            }
            print!("{line}");
        }
        Command::Verify { instance } => {
            let inst = Instance::load(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let outcome = verify(&inst)?;
            print!("{}", outcome.render());
            if !outcome.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Bench {
            grid,
            repeats,
            seed,
            mode,
            eta,
            tau,
            out,
        } => {
            let grid = Grid::parse(&grid)?;
            let result = bench(&BenchArgs {
                grid: &grid,
                repeats,
                seed,
                mode,
                eta,
                tau,
            })?;
            write_output(out.as_ref(), &render_csv(&result))?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
