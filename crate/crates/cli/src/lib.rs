//! Experiment commands behind the `qattn` binary.
//!
//! Every command is deterministic given its flags and seeds. Wall-clock
//! fields are the one exception; set `QATTN_FIXED_CLOCK=1` to pin them to
//! zero for byte-identical output.

pub mod commands;
pub mod grid;

pub use commands::{
    bench, generate, render_csv, run_record, verify, BenchArgs, BenchResult, BenchRow, Crossover,
    GenerateArgs, RunRecord, Summary, VerifyOutcome,
};
pub use grid::Grid;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "QATTN_THREADS";
/// Environment variable that zeroes every wall-clock field.
pub const FIXED_CLOCK_ENV: &str = "QATTN_FIXED_CLOCK";

pub const RUN_SCHEMA: &str = "qattn.run/1";
pub const BENCH_SCHEMA: &str = "qattn.bench/1";
