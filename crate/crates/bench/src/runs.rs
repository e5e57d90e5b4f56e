use std::collections::LinkedList;
use std::hint::black_box;
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use travpool::{Handle, Pool, SharedPool, DEFAULT_BIN_CAPACITY};

use crate::element::{draw_values, fold, workload_kernel, Element24, RANDOM_VALUES};
use crate::record::Measurement;

/// Bin sizes swept by the allocation benchmark.
pub const BIN_SIZE_SWEEP: [u32; 6] = [4000, 8000, 16000, 32000, 64000, 128000];
/// Thread counts swept when no count is given.
pub const THREAD_SWEEP: [usize; 4] = [1, 2, 4, 8];

const PAYLOAD: usize = 24;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub objects: usize,
    pub bin_size: u32,
    /// `None` sweeps [`THREAD_SWEEP`] where a benchmark is threaded.
    pub threads: Option<usize>,
    pub gap_percent: u8,
    pub seed: u64,
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            objects: 2_000_000,
            bin_size: DEFAULT_BIN_CAPACITY,
            threads: None,
            gap_percent: 0,
            seed: 0,
            reps: 3,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.objects >= 1, "objects must be at least 1");
        ensure!(self.gap_percent <= 100, "gap percent must be in 0..=100");
        ensure!(self.reps >= 3, "at least 3 repetitions are needed for a median");
        ensure!(self.bin_size >= 1, "bin size must be at least 1");
        if let Some(t) = self.threads {
            ensure!(t >= 1, "threads must be at least 1");
        }
        Ok(())
    }

    fn thread_counts(&self) -> Vec<usize> {
        match self.threads {
            Some(t) => vec![t],
            None => THREAD_SWEEP.to_vec(),
        }
    }
}

/// Runs `f` `reps` times. `f` returns the elapsed seconds of its timed
/// section and a checksum, which must not change between repetitions.
fn repeat<F: FnMut() -> Result<(f64, u64)>>(reps: usize, mut f: F) -> Result<(Vec<f64>, u64)> {
    let mut times = Vec::with_capacity(reps);
    let mut sum = None;
    for _ in 0..reps {
        let (secs, c) = f()?;
        if let Some(prev) = sum {
            ensure!(prev == c, "checksum changed between repetitions: {prev:#x} vs {c:#x}");
        }
        sum = Some(c);
        times.push(secs);
    }
    Ok((times, sum.unwrap_or(0)))
}

fn timed<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let t = Instant::now();
    let out = f();
    (t.elapsed().as_secs_f64(), out)
}

fn measurement(benchmark: &'static str, variant: &str, cfg: &BenchConfig) -> Measurement {
    Measurement {
        benchmark,
        variant: variant.to_string(),
        objects: cfg.objects,
        bin_size: cfg.bin_size,
        threads: 1,
        gap_percent: cfg.gap_percent,
        seconds: Vec::new(),
        bytes_reserved: 0,
        checksum: 0,
    }
}

fn sum_x<'a>(xs: impl Iterator<Item = &'a Element24>) -> u64 {
    xs.fold(0u64, |a, e| a.wrapping_add(fold(&[e.x, e.y, e.z])))
}

fn pool_checksum(pool: &Pool) -> u64 {
    pool.iter().fold(0u64, |a, (_, b)| {
        let w: Vec<u64> = b.chunks_exact(8).map(|c| u64::from_ne_bytes(c.try_into().unwrap())).collect();
        a.wrapping_add(fold(&w))
    })
}

/// Times `objects` allocations of 24-byte elements: the pool at each size of
/// `bin_sizes`, one heap allocation per element, a growable array and a
/// linked list.
pub fn run_alloc(cfg: &BenchConfig, bin_sizes: &[u32]) -> Result<Vec<Measurement>> {
    cfg.validate()?;
    let n = cfg.objects;
    let mut out = Vec::new();

    for &bin in bin_sizes {
        let mut m = measurement("alloc", "pool", cfg);
        m.bin_size = bin;
        let mut reserved = 0;
        let (times, sum) = repeat(cfg.reps, || {
            let mut pool = Pool::new(PAYLOAD, bin)?;
            let (secs, r) = timed(|| -> travpool::Result<()> {
                for i in 0..n as u64 {
                    black_box(pool.allocate_with(&Element24::nth(i).to_bytes())?);
                }
                Ok(())
            });
            r?;
            reserved = pool.bytes_reserved();
            Ok((secs, pool_checksum(&pool)))
        })?;
        m.seconds = times;
        m.checksum = sum;
        m.bytes_reserved = reserved;
        out.push(m);
    }

    let mut m = measurement("alloc", "box", cfg);
    let (times, sum) = repeat(cfg.reps, || {
        let mut held: Vec<Box<Element24>> = Vec::with_capacity(n);
        let (secs, ()) = timed(|| {
            for i in 0..n as u64 {
                held.push(black_box(Box::new(Element24::nth(i))));
            }
        });
        Ok((secs, sum_x(held.iter().map(|b| &**b))))
    })?;
    m.seconds = times;
    m.checksum = sum;
    m.bytes_reserved = n * std::mem::size_of::<Element24>();
    out.push(m);

    let mut m = measurement("alloc", "vec", cfg);
    let mut reserved = 0;
    let (times, sum) = repeat(cfg.reps, || {
        let mut v: Vec<Element24> = Vec::new();
        let (secs, ()) = timed(|| {
            for i in 0..n as u64 {
                v.push(Element24::nth(i));
            }
            black_box(&v);
        });
        reserved = v.capacity() * std::mem::size_of::<Element24>();
        Ok((secs, sum_x(v.iter())))
    })?;
    m.seconds = times;
    m.checksum = sum;
    m.bytes_reserved = reserved;
    out.push(m);

    let mut m = measurement("alloc", "linked-list", cfg);
    let (times, sum) = repeat(cfg.reps, || {
        let mut l: LinkedList<Element24> = LinkedList::new();
        let (secs, ()) = timed(|| {
            for i in 0..n as u64 {
                l.push_back(Element24::nth(i));
            }
            black_box(&l);
        });
        Ok((secs, sum_x(l.iter())))
    })?;
    m.seconds = times;
    m.checksum = sum;
    // Element plus two links per node.
    m.bytes_reserved = n * (std::mem::size_of::<Element24>() + 2 * std::mem::size_of::<usize>());
    out.push(m);

    Ok(out)
}

/// Fills a pool with `objects` elements, then frees each one independently
/// with probability `gap_percent / 100`.
pub fn gapped_pool(cfg: &BenchConfig) -> Result<Pool> {
    let mut pool = Pool::new(PAYLOAD, cfg.bin_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = f64::from(cfg.gap_percent) / 100.0;
    let handles: Vec<Handle> = (0..cfg.objects as u64)
        .map(|i| pool.allocate_with(&Element24::nth(i).to_bytes()))
        .collect::<travpool::Result<_>>()?;
    for h in handles {
        if rng.random_bool(p) {
            pool.deallocate(h)?;
        }
    }
    Ok(pool)
}

fn live_elements(pool: &Pool) -> Vec<Element24> {
    pool.iter()
        .map(|(_, b)| {
            let w = |k: usize| u64::from_ne_bytes(b[k * 8..k * 8 + 8].try_into().unwrap());
            Element24 { x: w(0), y: w(1), z: w(2) }
        })
        .collect()
}

fn kernel_pass_pool(pool: &mut Pool, values: &[u64; RANDOM_VALUES]) -> u64 {
    let mut sum = 0u64;
    pool.for_each_words_mut(|w| {
        workload_kernel(w, values);
        sum = sum.wrapping_add(fold(w));
    });
    sum
}

fn kernel_pass<'a>(xs: impl Iterator<Item = &'a mut Element24>, values: &[u64; RANDOM_VALUES]) -> u64 {
    let mut sum = 0u64;
    for e in xs {
        let mut w = [e.x, e.y, e.z];
        workload_kernel(&mut w, values);
        [e.x, e.y, e.z] = w;
        sum = sum.wrapping_add(fold(&w));
    }
    sum
}

/// Times one kernel pass over all live elements of a gapped pool, a
/// contiguous array and a doubly linked list holding the same elements.
pub fn run_iter(cfg: &BenchConfig) -> Result<Vec<Measurement>> {
    cfg.validate()?;
    let values = draw_values(cfg.seed);
    let mut out = Vec::new();

    let mut m = measurement("iter", "pool", cfg);
    let mut live = 0;
    let (times, sum) = repeat(cfg.reps, || {
        let mut pool = gapped_pool(cfg)?;
        live = pool.len();
        m.bytes_reserved = pool.bytes_reserved();
        let (secs, sum) = timed(|| kernel_pass_pool(&mut pool, &values));
        Ok((secs, sum))
    })?;
    m.seconds = times;
    m.checksum = sum;
    m.objects = live;
    out.push(m);

    let elements = live_elements(&gapped_pool(cfg)?);
    let mut m = measurement("iter", "array", cfg);
    let (times, sum) = repeat(cfg.reps, || {
        let mut v = elements.clone();
        let (secs, sum) = timed(|| kernel_pass(v.iter_mut(), &values));
        black_box(&v);
        Ok((secs, sum))
    })?;
    m.seconds = times;
    m.checksum = sum;
    m.objects = elements.len();
    m.bytes_reserved = elements.len() * std::mem::size_of::<Element24>();
    out.push(m);

    let mut m = measurement("iter", "linked-list", cfg);
    let (times, sum) = repeat(cfg.reps, || {
        let mut l: LinkedList<Element24> = elements.iter().copied().collect();
        let (secs, sum) = timed(|| kernel_pass(l.iter_mut(), &values));
        black_box(&l);
        Ok((secs, sum))
    })?;
    m.seconds = times;
    m.checksum = sum;
    m.objects = elements.len();
    m.bytes_reserved = elements.len() * (std::mem::size_of::<Element24>() + 2 * std::mem::size_of::<usize>());
    out.push(m);

    Ok(out)
}

/// Runs `work(thread_index, share)` on `threads` threads started together
/// and returns the wall time from release to the last join.
fn team<T: Send>(threads: usize, total: usize, work: impl Fn(usize, usize) -> T + Sync) -> (f64, Vec<T>) {
    let barrier = Barrier::new(threads + 1);
    std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let barrier = &barrier;
                let work = &work;
                let share = total / threads + usize::from(t < total % threads);
                s.spawn(move || {
                    barrier.wait();
                    work(t, share)
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        let results: Vec<T> = workers.into_iter().map(|w| w.join().expect("worker panicked")).collect();
        (start.elapsed().as_secs_f64(), results)
    })
}

/// Times `objects` allocations split across threads, for a pool behind one
/// global mutex and for [`SharedPool`]. With one thread an unsynchronized
/// pool is timed as well.
pub fn run_mt_alloc(cfg: &BenchConfig) -> Result<Vec<Measurement>> {
    cfg.validate()?;
    let n = cfg.objects;
    let mut out = Vec::new();
    for threads in cfg.thread_counts() {
        if threads == 1 {
            let mut m = measurement("mt-alloc", "pool", cfg);
            let (times, sum) = repeat(cfg.reps, || {
                let mut pool = Pool::new(PAYLOAD, cfg.bin_size)?;
                let mut held = Vec::with_capacity(n);
                let (secs, r) = timed(|| -> travpool::Result<()> {
                    for i in 0..n as u64 {
                        held.push(pool.allocate_with(&Element24::nth(i).to_bytes())?);
                    }
                    Ok(())
                });
                r?;
                ensure!(held.len() == n && pool.len() == n, "lost allocations");
                m.bytes_reserved = pool.bytes_reserved();
                Ok((secs, held.len() as u64))
            })?;
            m.seconds = times;
            m.checksum = sum;
            out.push(m);
        }

        let mut m = measurement("mt-alloc", "global-lock", cfg);
        m.threads = threads;
        let (times, sum) = repeat(cfg.reps, || {
            let pool = Mutex::new(Pool::new(PAYLOAD, cfg.bin_size)?);
            let (secs, held) = team(threads, n, |t, share| {
                let mut held = Vec::with_capacity(share);
                for i in 0..share as u64 {
                    let bytes = Element24::nth(i ^ (t as u64) << 40).to_bytes();
                    held.push(pool.lock().unwrap().allocate_with(&bytes));
                }
                held
            });
            let count = held.into_iter().flatten().collect::<travpool::Result<Vec<_>>>()?.len();
            let pool = pool.into_inner().unwrap();
            ensure!(count == n && pool.len() == n, "lost allocations");
            m.bytes_reserved = pool.bytes_reserved();
            Ok((secs, count as u64))
        })?;
        m.seconds = times;
        m.checksum = sum;
        out.push(m);

        let mut m = measurement("mt-alloc", "shared-pool", cfg);
        m.threads = threads;
        let (times, sum) = repeat(cfg.reps, || {
            let pool = SharedPool::new(PAYLOAD, cfg.bin_size)?;
            let (secs, held) = team(threads, n, |t, share| {
                let mut held = Vec::with_capacity(share);
                for i in 0..share as u64 {
                    let bytes = Element24::nth(i ^ (t as u64) << 40).to_bytes();
                    held.push(pool.allocate_with(&bytes));
                }
                held
            });
            let count = held.into_iter().flatten().collect::<travpool::Result<Vec<_>>>()?.len();
            let pool = pool.into_pool();
            ensure!(count == n && pool.len() == n, "lost allocations");
            m.bytes_reserved = pool.bytes_reserved();
            Ok((secs, count as u64))
        })?;
        m.seconds = times;
        m.checksum = sum;
        out.push(m);
    }
    Ok(out)
}

/// Times one kernel pass over a dense pool whose bins are split into one
/// contiguous run per thread. Thread count 1 is always measured first so
/// speedups can be computed.
pub fn run_par_iter(cfg: &BenchConfig) -> Result<Vec<Measurement>> {
    let mut dense = cfg.clone();
    dense.gap_percent = 0;
    dense.validate()?;
    let values = draw_values(cfg.seed);
    let mut counts = dense.thread_counts();
    if counts[0] != 1 {
        counts.insert(0, 1);
    }
    let mut out = Vec::new();
    for threads in counts {
        let mut m = measurement("par-iter", "partitioned", &dense);
        m.threads = threads;
        let (times, sum) = repeat(cfg.reps, || {
            let mut pool = gapped_pool(&dense)?;
            m.bytes_reserved = pool.bytes_reserved();
            let live = pool.len();
            let runs = pool.partition_mut(threads)?;
            let visited: usize = runs.iter().map(|r| r.len()).sum();
            ensure!(visited == live, "partition visits {visited} of {live} elements");
            let barrier = Barrier::new(threads + 1);
            let (secs, sums) = std::thread::scope(|s| {
                let workers: Vec<_> = runs
                    .into_iter()
                    .map(|mut run| {
                        let barrier = &barrier;
                        let values = &values;
                        s.spawn(move || {
                            barrier.wait();
                            let mut sum = 0u64;
                            run.for_each_words_mut(|w| {
                                workload_kernel(w, values);
                                sum = sum.wrapping_add(fold(w));
                            });
                            sum
                        })
                    })
                    .collect();
                barrier.wait();
                let start = Instant::now();
                let sums: Vec<u64> = workers.into_iter().map(|w| w.join().expect("worker panicked")).collect();
                (start.elapsed().as_secs_f64(), sums)
            });
            Ok((secs, sums.into_iter().fold(0u64, u64::wrapping_add)))
        })?;
        m.seconds = times;
        m.checksum = sum;
        out.push(m);
    }
    Ok(out)
}

/// Median time at one thread divided by median time at `threads`.
pub fn speedup(results: &[Measurement], threads: usize) -> Option<f64> {
    let at = |t: usize| results.iter().find(|m| m.threads == t).map(Measurement::median);
    Some(at(1)? / at(threads)?)
}

fn resident_bytes() -> Option<usize> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Allocator accounting for `objects` 24-byte elements: the pool's reserved
/// bytes, the payload-only lower bound and, where the platform reports it,
/// the change in resident memory while filling the pool.
pub fn memory_report(cfg: &BenchConfig) -> Result<Vec<Measurement>> {
    cfg.validate()?;
    let before = resident_bytes();
    let (secs, pool) = timed(|| gapped_pool(&BenchConfig { gap_percent: 0, ..cfg.clone() }));
    let pool = pool?;
    let after = resident_bytes();
    let sum = pool_checksum(&pool);

    let mut m = measurement("memory", "pool-accounting", cfg);
    m.gap_percent = 0;
    m.seconds = vec![secs];
    m.bytes_reserved = pool.bytes_reserved();
    m.checksum = sum;
    let mut bound = m.clone();
    bound.variant = "payload-bound".into();
    bound.bytes_reserved = cfg.objects * PAYLOAD;
    let mut out = vec![m, bound];
    if let (Some(a), Some(b)) = (before, after) {
        let mut rss = out[0].clone();
        rss.variant = "process-rss-delta".into();
        rss.bytes_reserved = b.saturating_sub(a);
        out.push(rss);
    }
    Ok(out)
}

/// Pool accounting over the payload-only bound, minus one.
pub fn accounting_overhead(objects: usize, bin_size: u32) -> Result<f64> {
    if objects == 0 {
        bail!("objects must be at least 1");
    }
    let mut pool = Pool::new(PAYLOAD, bin_size)?;
    for _ in 0..objects {
        pool.allocate()?;
    }
    Ok(pool.bytes_reserved() as f64 / (objects * PAYLOAD) as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(objects: usize) -> BenchConfig {
        BenchConfig {
            objects,
            bin_size: 64,
            threads: Some(2),
            gap_percent: 10,
            seed: 3,
            reps: 3,
        }
    }

    #[test]
    fn single_object_alloc_run() {
        let r = run_alloc(&small(1), &[4000]).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|m| m.objects == 1 && m.seconds.len() == 3));
    }

    #[test]
    fn alloc_checksums_agree_across_variants() {
        let r = run_alloc(&small(1000), &[16, 64]).unwrap();
        assert!(r.windows(2).all(|w| w[0].checksum == w[1].checksum));
    }

    #[test]
    fn iter_checksums_agree_across_variants() {
        for gap in [0, 10, 50] {
            let cfg = BenchConfig { gap_percent: gap, ..small(5000) };
            let r = run_iter(&cfg).unwrap();
            assert_eq!(r[0].checksum, r[1].checksum);
            assert_eq!(r[1].checksum, r[2].checksum);
            assert_eq!(r[0].objects, r[1].objects);
        }
    }

    #[test]
    fn gaps_free_expected_fraction() {
        let cfg = BenchConfig { gap_percent: 50, ..small(20_000) };
        let live = gapped_pool(&cfg).unwrap().len();
        assert!((9_000..11_000).contains(&live), "{live}");
        let none = gapped_pool(&BenchConfig { gap_percent: 0, ..small(100) }).unwrap().len();
        assert_eq!(none, 100);
    }

    #[test]
    fn mt_alloc_counts() {
        let cfg = BenchConfig { threads: None, ..small(4000) };
        let r = run_mt_alloc(&cfg).unwrap();
        assert_eq!(r.len(), 1 + 2 * THREAD_SWEEP.len());
        assert!(r.iter().all(|m| m.checksum == 4000));
    }

    #[test]
    fn par_iter_checksum_independent_of_threads() {
        let cfg = BenchConfig { threads: Some(3), ..small(5000) };
        let r = run_par_iter(&cfg).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].threads, 1);
        assert_eq!(r[0].checksum, r[1].checksum);
        assert!(speedup(&r, 1).unwrap() == 1.0);
    }

    #[test]
    fn memory_bound_row() {
        let r = memory_report(&small(1000)).unwrap();
        assert_eq!(r[1].bytes_reserved, 24_000);
        assert!(r[0].bytes_reserved > r[1].bytes_reserved);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig { gap_percent: 101, ..small(1) }.validate().is_err());
        assert!(BenchConfig { objects: 0, ..small(1) }.validate().is_err());
        assert!(BenchConfig { reps: 2, ..small(1) }.validate().is_err());
    }
}
