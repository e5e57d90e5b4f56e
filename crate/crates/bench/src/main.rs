use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use travpool::oracle::fuzz::{fuzz, FuzzConfig, Verdict};
use travpool::oracle::FreeTopCheck;
use travpool_bench::{
    memory_report, run_alloc, run_iter, run_mt_alloc, run_par_iter, BenchConfig, BenchRecord,
    CsvSink, Measurement, BIN_SIZE_SWEEP,
};

#[derive(Parser)]
#[command(name = "travpool-bench", version, about = "Benchmarks and fuzzing for travpool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocation time for the pool (bin size sweep) and baseline allocators.
    Alloc(Common),
    /// One kernel pass over all live elements, with gaps.
    Iter(Common),
    /// Allocation split across threads: global lock vs shared pool.
    MtAlloc(Common),
    /// Kernel pass over a dense pool partitioned across threads.
    ParIter(Common),
    /// Memory accounting against the payload-only bound.
    Memory(Common),
    /// Run the pool against the reference model.
    Fuzz(FuzzArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 2_000_000)]
    objects: usize,
    /// Slots per bin. `alloc` sweeps several sizes when omitted.
    #[arg(long)]
    bin_size: Option<u32>,
    /// Worker threads. Threaded benchmarks sweep 1, 2, 4, 8 when omitted.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=100))]
    gap_percent: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Append rows to this file instead of printing them.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            objects: self.objects,
            bin_size: self.bin_size.unwrap_or(travpool::DEFAULT_BIN_CAPACITY),
            threads: self.threads,
            gap_percent: self.gap_percent,
            seed: self.seed,
            reps: self.reps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FuzzMode {
    Sequential,
    Exhaustive,
    Concurrent,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreeTop {
    Full,
    Guarded,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, value_enum, default_value_t = FuzzMode::Sequential)]
    mode: FuzzMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Operations (sequential, concurrent).
    #[arg(long, default_value_t = 100_000)]
    ops: usize,
    /// Bin capacity; exhaustive mode covers every capacity up to this.
    #[arg(long, default_value_t = 64)]
    bin_size: u32,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Sequence length for exhaustive mode.
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Which links of the free-list top must be valid before each
    /// allocation: both, or only those the allocation reads.
    #[arg(long, value_enum, default_value_t = FreeTop::Full)]
    free_top: FreeTop,
    /// Write the minimized reproducer trace here on divergence.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn sink(path: &Option<PathBuf>) -> Result<CsvSink> {
    match path {
        Some(p) => CsvSink::append(p).with_context(|| format!("cannot open {}", p.display())),
        None => CsvSink::stdout().context("cannot write to stdout"),
    }
}

fn emit(path: &Option<PathBuf>, seed: u64, results: &[Measurement]) -> Result<()> {
    let mut out = sink(path)?;
    for m in results {
        for r in m.records(seed) {
            out.write(&r)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_fuzz(a: &FuzzArgs) -> Result<bool> {
    let free_top = match a.free_top {
        FreeTop::Full => FreeTopCheck::Full,
        FreeTop::Guarded => FreeTopCheck::Guarded,
    };
    let (cfg, label) = match a.mode {
        FuzzMode::Sequential => (FuzzConfig::sequential(a.seed, a.ops, a.bin_size), "sequential"),
        FuzzMode::Exhaustive => (FuzzConfig::exhaustive(a.bin_size, a.depth), "exhaustive"),
        FuzzMode::Concurrent => (
            FuzzConfig::concurrent(a.seed, a.ops, a.bin_size, a.threads),
            "concurrent",
        ),
    };
    let cfg = cfg.with_free_top(free_top);
    let start = Instant::now();
    let verdict = fuzz(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let (ops, passed) = match &verdict {
        Verdict::Pass(s) => {
            eprintln!(
                "pass: {} ops, {} sequences, max writes alloc {} / free {}, max reads {}, max bins {}",
                s.ops, s.sequences, s.max_alloc_writes, s.max_free_writes, s.max_reads, s.max_bins
            );
            (s.ops as usize, true)
        }
        Verdict::Fail(d) => {
            eprintln!("{d}");
            if let Some(p) = &a.trace_out {
                std::fs::write(p, d.trace.to_string())
                    .with_context(|| format!("cannot write {}", p.display()))?;
            }
            (0, false)
        }
    };
    if a.csv.is_some() {
        let mut out = sink(&a.csv)?;
        out.write(&BenchRecord {
            benchmark: "fuzz".into(),
            variant: label.into(),
            objects: ops,
            bin_size: a.bin_size,
            threads: if matches!(a.mode, FuzzMode::Concurrent) { a.threads } else { 1 },
            gap_percent: 0,
            seed: a.seed,
            rep: "0".into(),
            seconds: secs,
            ops_per_sec: ops as f64 / secs.max(f64::MIN_POSITIVE),
            bytes_reserved: 0,
            checksum: u64::from(passed),
        })?;
        out.flush()?;
    }
    Ok(passed)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Alloc(c) => {
            let sizes: Vec<u32> = match c.bin_size {
                Some(b) => vec![b],
                None => BIN_SIZE_SWEEP.to_vec(),
            };
            emit(&c.csv, c.seed, &run_alloc(&c.config(), &sizes)?)?;
        }
        Command::Iter(c) => emit(&c.csv, c.seed, &run_iter(&c.config())?)?,
        Command::MtAlloc(c) => emit(&c.csv, c.seed, &run_mt_alloc(&c.config())?)?,
        Command::ParIter(c) => emit(&c.csv, c.seed, &run_par_iter(&c.config())?)?,
        Command::Memory(c) => emit(&c.csv, c.seed, &memory_report(&c.config())?)?,
        Command::Fuzz(a) => return run_fuzz(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
