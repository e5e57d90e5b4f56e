//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.
//! Tests share a lock so timing runs never overlap.

use std::sync::Mutex;

use travpool::oracle::fuzz::{
    exhaustive, exhaustive_sequence_count, fuzz, single_faults, FuzzConfig, FuzzStats, Setup,
    Verdict,
};
use travpool::oracle::FreeTopCheck;
use travpool::{Faults, Pool, SlotLayout};
use travpool_bench::{
    accounting_overhead, run_alloc, run_iter, run_mt_alloc, run_par_iter, speedup, BenchConfig,
    Measurement,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
}

const SEEDS: std::ops::Range<u64> = 0..10;
const CAPACITIES: [u32; 4] = [4, 8, 64, 1024];
const OPS: usize = 100_000;

fn guarded() -> Setup {
    Setup {
        faults: Faults::NONE,
        free_top: FreeTopCheck::Guarded,
    }
}

/// Sequential runs over all seeds and capacities. Stops at the first
/// divergence.
fn sequential_runs(free_top: FreeTopCheck) -> Result<FuzzStats, String> {
    let mut total = FuzzStats::default();
    for seed in SEEDS {
        for cap in CAPACITIES {
            match fuzz(&FuzzConfig::sequential(seed, OPS, cap).with_free_top(free_top)) {
                Verdict::Pass(s) => {
                    total.ops += s.ops;
                    total.max_alloc_writes = total.max_alloc_writes.max(s.max_alloc_writes);
                    total.max_free_writes = total.max_free_writes.max(s.max_free_writes);
                    total.max_reads = total.max_reads.max(s.max_reads);
                }
                Verdict::Fail(d) => return Err(d.to_string()),
            }
        }
    }
    Ok(total)
}

#[test]
fn criterion_1_oracle_equivalence() {
    let _g = serial();
    let start = std::time::Instant::now();
    let full = sequential_runs(FreeTopCheck::Full);
    let secs = start.elapsed().as_secs_f64();
    match &full {
        Ok(s) => report(1, secs < 120.0, &format!("{} ops in {secs:.1}s", s.ops)),
        Err(d) => {
            let d = d.replace('\n', " | ");
            report(1, false, &format!("first divergence: {d}"));
            // Same runs, checking only the free-list-top links the next
            // allocation reads, to show which check fails.
            let other = sequential_runs(FreeTopCheck::Guarded);
            println!(
                "  with the guarded free-top check instead: {}",
                match other {
                    Ok(s) => format!("all other checks pass over {} ops", s.ops),
                    Err(d) => format!("also diverges: {d}"),
                }
            );
        }
    }
    assert!(full.is_ok());
}

#[test]
fn criterion_2_exhaustive_small() {
    let _g = serial();
    let start = std::time::Instant::now();
    let mut sequences = 0;
    let mut failure = None;
    for cap in 1..=4 {
        match exhaustive(cap, 10, guarded()) {
            Verdict::Pass(s) => sequences += s.sequences,
            Verdict::Fail(d) => {
                failure = Some(d.to_string());
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let expected = 4 * exhaustive_sequence_count(10);
    let ok = failure.is_none() && sequences == expected && secs < 60.0;
    report(
        2,
        ok,
        &match &failure {
            None => format!("{sequences} sequences of length 10 on capacities 1..=4 in {secs:.1}s"),
            Some(d) => d.replace('\n', " | "),
        },
    );
    assert!(ok);
}

#[test]
fn criterion_3_mutation_sensitivity() {
    let _g = serial();
    let mut lines = Vec::new();
    let mut ok = true;
    for (c, faults) in single_faults() {
        let setup = Setup { faults, ..guarded() };
        let caught = (1..=4).find_map(|cap| exhaustive(cap, 10, setup).divergence().cloned());
        match caught {
            Some(d) => lines.push(format!("{c:?} caught, trace of {} ops", d.trace.len())),
            None => {
                ok = false;
                lines.push(format!("{c:?} NOT caught"));
            }
        }
    }
    report(3, ok, &lines.join("; "));
    assert!(ok);
}

#[test]
fn criterion_4_constant_writes() {
    let _g = serial();
    let runs = sequential_runs(FreeTopCheck::Guarded);
    let ok = match &runs {
        Ok(s) => s.max_alloc_writes <= 3 && s.max_free_writes <= 5,
        Err(_) => false,
    };
    report(
        4,
        ok,
        &match &runs {
            Ok(s) => format!(
                "max writes {} per allocation, {} per deallocation, max reads {}, over {} ops",
                s.max_alloc_writes, s.max_free_writes, s.max_reads, s.ops
            ),
            Err(d) => d.replace('\n', " | "),
        },
    );
    assert!(ok);
}

#[test]
fn criterion_5_footprint_and_accounting() {
    let _g = serial();
    let f24 = SlotLayout::new(24).unwrap().footprint();
    let small: Vec<usize> = (1..=16).map(|p| SlotLayout::new(p).unwrap().footprint()).collect();
    let overhead = accounting_overhead(1_000_000, 64_000).unwrap();
    // Accounting must equal bins * (capacity + 4) * footprint + metadata.
    let mut pool = Pool::new(24, 64_000).unwrap();
    for _ in 0..1_000_000 {
        pool.allocate().unwrap();
    }
    let slots = pool.bin_count() * 64_004 * 28;
    let ok = f24 == 28 && small.iter().all(|&f| f == 20) && overhead < 0.20 && pool.bytes_reserved() >= slots;
    report(
        5,
        ok,
        &format!(
            "footprint 24 -> {f24}, 1..=16 -> {:?}, overhead {:.2}% over payload bound",
            small.iter().collect::<std::collections::BTreeSet<_>>(),
            overhead * 100.0
        ),
    );
    assert!(ok);
}

fn median_of(ms: &[Measurement], variant: &str) -> f64 {
    ms.iter().find(|m| m.variant == variant).unwrap().median()
}

#[test]
fn criterion_6_iteration_ratios() {
    let _g = serial();
    let base = BenchConfig {
        objects: 2_000_000,
        reps: 5,
        ..BenchConfig::default()
    };
    let dense = run_iter(&base).unwrap();
    let g10 = run_iter(&BenchConfig { gap_percent: 10, ..base.clone() }).unwrap();
    let g50 = run_iter(&BenchConfig { gap_percent: 50, ..base.clone() }).unwrap();
    let pool = median_of(&dense, "pool");
    let array = median_of(&dense, "array");
    let r0 = pool / array;
    let r50 = median_of(&g50, "pool") / pool;
    let r10 = median_of(&g10, "pool") / pool;
    let same_sum = dense[0].checksum == dense[1].checksum;
    let ok = r0 <= 1.5 && r50 <= 3.5 && r10 <= 1.8 && same_sum;
    report(
        6,
        ok,
        &format!(
            "dense/array {r0:.2} (<=1.5), 50% gaps/dense {r50:.2} (<=3.5), 10% gaps/dense {r10:.2} (<=1.8); \
             pool {:.1} ms, array {:.1} ms",
            pool * 1e3,
            array * 1e3
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_allocation_direction() {
    let _g = serial();
    let cfg = BenchConfig {
        objects: 2_000_000,
        reps: 5,
        ..BenchConfig::default()
    };
    let r = run_alloc(&cfg, &[64_000]).unwrap();
    let pool = median_of(&r, "pool");
    let boxed = median_of(&r, "box");
    let ok = pool < boxed;
    report(
        7,
        ok,
        &format!("pool {:.1} ms vs one heap allocation per object {:.1} ms", pool * 1e3, boxed * 1e3),
    );
    assert!(ok);
}

#[test]
fn criterion_8_concurrency_direction() {
    let _g = serial();
    let cfg = BenchConfig {
        objects: 2_000_000,
        threads: Some(4),
        reps: 5,
        ..BenchConfig::default()
    };
    let r = run_mt_alloc(&cfg).unwrap();
    let shared = median_of(&r, "shared-pool");
    let global = median_of(&r, "global-lock");
    let fuzzed = fuzz(&FuzzConfig::concurrent(0, 1_000_000, 64, 4));
    let ok = shared <= global && fuzzed.is_pass();
    report(
        8,
        ok,
        &format!(
            "4 threads: shared pool {:.1} ms, global lock {:.1} ms; concurrent fuzz {}; {} CPU(s)",
            shared * 1e3,
            global * 1e3,
            match &fuzzed {
                Verdict::Pass(s) => format!("pass, {} live at end", s.final_live),
                Verdict::Fail(d) => d.message.clone(),
            },
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_parallel_iteration() {
    let _g = serial();
    let cfg = BenchConfig {
        objects: 2_000_000,
        threads: Some(2),
        reps: 5,
        ..BenchConfig::default()
    };
    let r = run_par_iter(&cfg).unwrap();
    let s2 = speedup(&r, 2).unwrap();
    let bins = 2_000_000usize.div_ceil(64_000);

    // Coverage: every k in 1..=bins+2 visits each live element exactly once.
    let mut pool = Pool::new(24, 1000).unwrap();
    let hs: Vec<_> = (0..20_000).map(|_| pool.allocate().unwrap()).collect();
    for h in hs.iter().step_by(3) {
        pool.deallocate(*h).unwrap();
    }
    let all: Vec<_> = pool.iter().map(|(h, _)| h).collect();
    let coverage = (1..=pool.bin_count() + 2).all(|k| {
        let joined: Vec<_> = pool
            .partition(k)
            .unwrap()
            .iter()
            .flat_map(|r| pool.iter_range(r).map(|(h, _)| h).collect::<Vec<_>>())
            .collect();
        joined == all
    });

    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ok = s2 >= 1.5 && coverage && bins >= 4;
    report(
        9,
        ok,
        &format!("speedup at 2 threads {s2:.2} (>=1.5) over {bins} bins on {cpus} CPU(s); partition coverage {coverage}"),
    );
    assert!(ok);
}
