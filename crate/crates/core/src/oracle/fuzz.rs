//! Model-based fuzzing of [`Pool`] and [`SharedPool`].
//!
//! Sequential and exhaustive modes run a real pool and the
//! [`ReferenceModel`] in lockstep. After every operation they check the
//! predicted slot, the touched bin's structure, the free-list top, the
//! per-operation read/write counts and the full iteration sequence.
//! Concurrent mode hammers one [`SharedPool`] from several threads and
//! compares the final live set with what the threads believe is live.

use std::collections::HashSet;
use std::fmt;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bin::{Correction, Faults, OpCounter};
use crate::list::BinId;
use crate::oracle::model::{Pair, ReferenceModel};
use crate::oracle::trace::{Op, Trace};
use crate::oracle::validity::{check_free_top_with, scan_validity, FreeTopCheck};
use crate::pool::{Handle, Pool};
use crate::sync::SharedPool;

/// Payload size used by every fuzz mode.
pub const FUZZ_PAYLOAD: usize = 24;

/// Upper bounds on slot-field accesses per operation.
pub const MAX_ALLOC_WRITES: u32 = 3;
pub const MAX_FREE_WRITES: u32 = 5;
pub const MAX_OP_READS: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    /// Every op sequence up to `depth`, on capacities `1..=capacity`.
    Exhaustive { depth: usize },
    Concurrent { threads: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct FuzzConfig {
    pub seed: u64,
    pub op_count: usize,
    pub bin_capacity: u32,
    pub mode: Mode,
    pub setup: Setup,
}

/// Knobs shared by every lockstep run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Setup {
    /// Corrections to switch off. Only mutation tests set this.
    pub faults: Faults,
    pub free_top: FreeTopCheck,
}

impl FuzzConfig {
    pub fn sequential(seed: u64, op_count: usize, bin_capacity: u32) -> Self {
        FuzzConfig {
            seed,
            op_count,
            bin_capacity,
            mode: Mode::Sequential,
            setup: Setup::default(),
        }
    }

    pub fn exhaustive(bin_capacity: u32, depth: usize) -> Self {
        FuzzConfig {
            seed: 0,
            op_count: depth,
            bin_capacity,
            mode: Mode::Exhaustive { depth },
            setup: Setup::default(),
        }
    }

    pub fn concurrent(seed: u64, op_count: usize, bin_capacity: u32, threads: usize) -> Self {
        FuzzConfig {
            seed,
            op_count,
            bin_capacity,
            mode: Mode::Concurrent { threads },
            setup: Setup::default(),
        }
    }

    pub fn with_faults(mut self, faults: Faults) -> Self {
        self.setup.faults = faults;
        self
    }

    pub fn with_free_top(mut self, free_top: FreeTopCheck) -> Self {
        self.setup.free_top = free_top;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuzzStats {
    pub ops: u64,
    pub allocs: u64,
    pub frees: u64,
    pub retired_bins: u64,
    /// Complete op sequences explored (exhaustive mode).
    pub sequences: u64,
    pub max_alloc_writes: u32,
    pub max_free_writes: u32,
    pub max_reads: u32,
    pub max_live: usize,
    pub max_bins: usize,
    /// Live elements at the end (concurrent mode).
    pub final_live: usize,
}

impl FuzzStats {
    fn merge(&mut self, o: &FuzzStats) {
        self.ops += o.ops;
        self.allocs += o.allocs;
        self.frees += o.frees;
        self.retired_bins += o.retired_bins;
        self.sequences += o.sequences;
        self.max_alloc_writes = self.max_alloc_writes.max(o.max_alloc_writes);
        self.max_free_writes = self.max_free_writes.max(o.max_free_writes);
        self.max_reads = self.max_reads.max(o.max_reads);
        self.max_live = self.max_live.max(o.max_live);
        self.max_bins = self.max_bins.max(o.max_bins);
        self.final_live += o.final_live;
    }
}

/// First disagreement between pool and model, with a reproducer.
#[derive(Clone, Debug)]
pub struct Divergence {
    pub seed: u64,
    pub op_count: usize,
    pub bin_capacity: u32,
    pub message: String,
    /// Minimized op sequence ending in the failing op.
    pub trace: Trace,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "divergence (seed {}, ops {}, capacity {}): {}",
            self.seed, self.op_count, self.bin_capacity, self.message
        )?;
        write!(f, "{}", self.trace)
    }
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Pass(FuzzStats),
    Fail(Box<Divergence>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass(_))
    }

    pub fn stats(&self) -> Option<&FuzzStats> {
        match self {
            Verdict::Pass(s) => Some(s),
            Verdict::Fail(_) => None,
        }
    }

    pub fn divergence(&self) -> Option<&Divergence> {
        match self {
            Verdict::Pass(_) => None,
            Verdict::Fail(d) => Some(d),
        }
    }
}

fn fill_payload(words: &mut [u64], tag: u64) {
    for (n, w) in words.iter_mut().enumerate() {
        *w = tag.rotate_left(n as u32 * 13) ^ n as u64;
    }
}

/// A pool and a model advanced together.
#[derive(Clone)]
pub struct Lockstep {
    pool: Pool,
    model: ReferenceModel,
    // Parallel to `model.live()`: oldest first.
    handles: Vec<Handle>,
    setup: Setup,
    stats: FuzzStats,
    step: u64,
}

impl Lockstep {
    pub fn new(bin_capacity: u32, setup: Setup) -> Self {
        Lockstep {
            pool: Pool::new(FUZZ_PAYLOAD, bin_capacity).expect("valid fuzz capacity"),
            model: ReferenceModel::new(bin_capacity),
            handles: Vec::new(),
            setup,
            stats: FuzzStats::default(),
            step: 0,
        }
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn model(&self) -> &ReferenceModel {
        &self.model
    }

    pub fn stats(&self) -> &FuzzStats {
        &self.stats
    }

    pub fn live_count(&self) -> usize {
        self.handles.len()
    }

    fn ordinal(&self, id: BinId) -> usize {
        self.pool.bin_position(id).map_or(0, |p| p + 1)
    }

    fn bin_at(&self, ordinal: usize) -> Option<BinId> {
        self.pool.bin_ids().nth(ordinal.checked_sub(1)?)
    }

    /// Applies `op` to both sides and runs every check. `Err` describes the
    /// first failed check.
    pub fn apply(&mut self, op: Op) -> Result<(), String> {
        self.step += 1;
        self.stats.ops += 1;
        let touched = match op {
            Op::Alloc => Some(self.alloc()?),
            Op::Free(k) => Some(self.free(k)?),
            Op::Retire => {
                let got = self.pool.retire_empty_bins();
                let want = self.model.retire();
                if got != want {
                    return Err(format!("retired {got} bins, model retired {want}"));
                }
                self.stats.retired_bins += got as u64;
                None
            }
        };
        self.stats.max_live = self.stats.max_live.max(self.handles.len());
        self.stats.max_bins = self.stats.max_bins.max(self.pool.bin_count());
        self.check(touched)
    }

    fn alloc(&mut self) -> Result<BinId, String> {
        if let Some(ord) = self.model.next_alloc_bin() {
            let id = self
                .bin_at(ord)
                .ok_or_else(|| format!("model expects bin {ord}, pool has fewer bins"))?;
            let report = check_free_top_with(self.pool.bin(id).unwrap(), self.setup.free_top);
            if !report.is_valid() {
                return Err(format!("free-list top before allocation in bin {ord}: {report}"));
            }
        }
        let (want, tag) = self.model.alloc();
        let mut probe = OpCounter::with_faults(self.setup.faults);
        let h = self
            .pool
            .allocate_probed(&mut probe)
            .map_err(|e| format!("allocate failed: {e}"))?;
        self.stats.allocs += 1;
        self.stats.max_alloc_writes = self.stats.max_alloc_writes.max(probe.writes);
        self.stats.max_reads = self.stats.max_reads.max(probe.reads);
        if probe.writes > MAX_ALLOC_WRITES || probe.reads > MAX_OP_READS {
            return Err(format!(
                "allocation touched {} writes / {} reads",
                probe.writes, probe.reads
            ));
        }
        let got: Pair = (self.ordinal(h.bin()), h.slot());
        if got != want {
            return Err(format!("allocated {got:?}, model predicted {want:?}"));
        }
        fill_payload(self.pool.words_mut(h).unwrap(), tag);
        self.handles.push(h);
        Ok(h.bin())
    }

    fn free(&mut self, k: usize) -> Result<BinId, String> {
        if k >= self.handles.len() {
            return Err(format!("F {k} with only {} live elements", self.handles.len()));
        }
        let h = self.handles.remove(k);
        let want = self.model.free_age(k).map_err(|e| e.to_string())?;
        let got: Pair = (self.ordinal(h.bin()), h.slot());
        if got != want {
            return Err(format!("freeing {got:?}, model expected {want:?}"));
        }
        let mut probe = OpCounter::with_faults(self.setup.faults);
        self.pool
            .deallocate_probed(h, &mut probe)
            .map_err(|e| format!("deallocate {got:?} failed: {e}"))?;
        self.stats.frees += 1;
        self.stats.max_free_writes = self.stats.max_free_writes.max(probe.writes);
        self.stats.max_reads = self.stats.max_reads.max(probe.reads);
        if probe.writes > MAX_FREE_WRITES || probe.reads > MAX_OP_READS {
            return Err(format!(
                "deallocation touched {} writes / {} reads",
                probe.writes, probe.reads
            ));
        }
        Ok(h.bin())
    }

    fn check(&self, touched: Option<BinId>) -> Result<(), String> {
        if self.pool.bin_count() != self.model.bin_count() {
            return Err(format!(
                "pool has {} bins, model {}",
                self.pool.bin_count(),
                self.model.bin_count()
            ));
        }
        if let Some(id) = touched {
            let bin = self.pool.bin(id).ok_or("touched bin vanished")?;
            let ord = self.ordinal(id);
            let report = scan_validity(bin);
            if !report.is_valid() {
                return Err(format!("bin {ord} invalid: {report}"));
            }
            let report = check_free_top_with(bin, self.setup.free_top);
            if !report.is_valid() {
                return Err(format!("bin {ord} free-list top: {report}"));
            }
        }
        self.check_iteration()?;
        if self.handles.len() <= 64 || self.step % 97 == 0 {
            self.check_cursors()?;
        }
        Ok(())
    }

    fn check_iteration(&self) -> Result<(), String> {
        let ids: Vec<BinId> = self.pool.bin_ids().collect();
        let mut cached = (BinId::NONE, 0usize);
        let mut pool_iter = self.pool.iter();
        let mut model_iter = self.model.iteration_order();
        let mut n = 0usize;
        loop {
            match (pool_iter.next(), model_iter.next()) {
                (None, None) => break,
                (Some((h, bytes)), Some((want, tag))) => {
                    if cached.0 != h.bin() {
                        let pos = ids.iter().position(|&i| i == h.bin()).unwrap_or(usize::MAX);
                        cached = (h.bin(), pos.wrapping_add(1));
                    }
                    let got = (cached.1, h.slot());
                    if got != want {
                        return Err(format!("iteration step {n}: pool at {got:?}, model at {want:?}"));
                    }
                    let first = u64::from_ne_bytes(bytes[..8].try_into().unwrap());
                    if first != tag.rotate_left(0) {
                        return Err(format!("payload at {got:?} is {first:#x}, expected {tag:#x}"));
                    }
                }
                (Some((h, _)), None) => {
                    return Err(format!("pool iterates extra element {h:?} after {n}"));
                }
                (None, Some((want, _))) => {
                    return Err(format!("pool iteration stops after {n}, model has {want:?}"));
                }
            }
            n += 1;
        }
        Ok(())
    }

    /// Forward and backward cursor walks must agree with the iterator.
    fn check_cursors(&self) -> Result<(), String> {
        let forward: Vec<Handle> = self.pool.iter().map(|(h, _)| h).collect();
        let mut c = self.pool.begin();
        let mut walked = Vec::with_capacity(forward.len());
        while c != self.pool.end() {
            walked.push(self.pool.handle_at(c).map_err(|e| format!("cursor deref: {e}"))?);
            c = self.pool.advance(c).map_err(|e| format!("cursor advance: {e}"))?;
        }
        if walked != forward {
            return Err("cursor walk differs from iterator".into());
        }
        let mut back = Vec::with_capacity(forward.len());
        let mut c = self.pool.end();
        while c != self.pool.begin() {
            c = self.pool.retreat(c).map_err(|e| format!("cursor retreat: {e}"))?;
            back.push(self.pool.handle_at(c).map_err(|e| format!("cursor deref: {e}"))?);
        }
        back.reverse();
        if back != forward {
            return Err("reverse cursor walk differs from forward walk".into());
        }
        Ok(())
    }
}

/// Deterministic op stream for `(seed, op_count, capacity)`.
///
/// Alternates phases that mostly fill, mostly drain or churn, so bins fill
/// up, empty out and get retired. Frees favor recently allocated elements
/// part of the time, which exercises deep LIFO reuse.
pub fn generate_ops(seed: u64, op_count: usize, bin_capacity: u32) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_live = (bin_capacity as usize * 3 + 4).min(1536);
    let mut live = 0usize;
    let mut ops = Vec::with_capacity(op_count);
    let mut p_alloc = 0.5;
    let mut phase_left = 0usize;
    while ops.len() < op_count {
        if phase_left == 0 {
            phase_left = rng.random_range(16..(4 * max_live).max(32));
            p_alloc = [0.15, 0.5, 0.85][rng.random_range(0..3)];
        }
        phase_left -= 1;
        let op = if rng.random_bool(0.002) {
            Op::Retire
        } else if live == 0 || (live < max_live && rng.random_bool(p_alloc)) {
            Op::Alloc
        } else if rng.random_bool(0.3) {
            let back = rng.random_range(0..live.min(4));
            Op::Free(live - 1 - back)
        } else {
            Op::Free(rng.random_range(0..live))
        };
        match op {
            Op::Alloc => live += 1,
            Op::Free(_) => live -= 1,
            Op::Retire => {}
        }
        ops.push(op);
    }
    ops
}

/// Runs `ops`, skipping frees of nonexistent elements. Returns the ops
/// actually applied and, on failure, the error (the failing op is the last
/// applied one).
fn replay_lenient(ops: &[Op], bin_capacity: u32, setup: Setup) -> (Vec<Op>, Option<String>) {
    let mut ls = Lockstep::new(bin_capacity, setup);
    let mut applied = Vec::with_capacity(ops.len());
    for &op in ops {
        if let Op::Free(k) = op {
            if k >= ls.live_count() {
                continue;
            }
        }
        applied.push(op);
        if let Err(e) = ls.apply(op) {
            return (applied, Some(e));
        }
    }
    (applied, None)
}

/// Replays a trace strictly. `Err` carries the failing op index and message.
pub fn replay(trace: &Trace, bin_capacity: u32, setup: Setup) -> Result<FuzzStats, (usize, String)> {
    let mut ls = Lockstep::new(bin_capacity, setup);
    for (i, &op) in trace.ops().iter().enumerate() {
        ls.apply(op).map_err(|e| (i, e))?;
    }
    Ok(ls.stats.clone())
}

/// Shrinks a failing op sequence by deleting chunks while it still fails.
pub fn minimize(ops: &[Op], bin_capacity: u32, setup: Setup) -> (Trace, String) {
    let (mut cur, mut msg) = match replay_lenient(ops, bin_capacity, setup) {
        (applied, Some(m)) => (applied, m),
        (applied, None) => return (Trace(applied), "sequence does not fail".into()),
    };
    let mut budget: usize = 400;
    let mut chunk = (cur.len() / 2).max(1);
    loop {
        let mut i = 0;
        let mut shrunk = false;
        while i < cur.len() && budget > 0 {
            budget -= 1;
            let end = (i + chunk).min(cur.len());
            let candidate: Vec<Op> = cur[..i].iter().chain(&cur[end..]).copied().collect();
            match replay_lenient(&candidate, bin_capacity, setup) {
                (applied, Some(m)) if applied.len() < cur.len() => {
                    cur = applied;
                    msg = m;
                    shrunk = true;
                }
                _ => i += chunk,
            }
        }
        if budget == 0 || (chunk == 1 && !shrunk) {
            break;
        }
        if !shrunk {
            chunk = (chunk / 2).max(1);
        }
    }
    (Trace(cur), msg)
}

fn fail(cfg: &FuzzConfig, ops: &[Op]) -> Verdict {
    let (trace, message) = minimize(ops, cfg.bin_capacity, cfg.setup);
    Verdict::Fail(Box::new(Divergence {
        seed: cfg.seed,
        op_count: cfg.op_count,
        bin_capacity: cfg.bin_capacity,
        message,
        trace,
    }))
}

pub fn fuzz(cfg: &FuzzConfig) -> Verdict {
    match cfg.mode {
        Mode::Sequential => fuzz_sequential(cfg),
        Mode::Exhaustive { depth } => {
            let mut total = FuzzStats::default();
            for cap in 1..=cfg.bin_capacity {
                match exhaustive(cap, depth, cfg.setup) {
                    Verdict::Pass(s) => total.merge(&s),
                    failed => return failed,
                }
            }
            Verdict::Pass(total)
        }
        Mode::Concurrent { threads } => fuzz_concurrent(cfg, threads),
    }
}

fn fuzz_sequential(cfg: &FuzzConfig) -> Verdict {
    let ops = generate_ops(cfg.seed, cfg.op_count, cfg.bin_capacity);
    let mut ls = Lockstep::new(cfg.bin_capacity, cfg.setup);
    for (i, &op) in ops.iter().enumerate() {
        if ls.apply(op).is_err() {
            return fail(cfg, &ops[..=i]);
        }
    }
    Verdict::Pass(ls.stats)
}

/// Explores every sequence of `A`, `F k` and `R` ops of length `depth` on
/// one capacity.
pub fn exhaustive(bin_capacity: u32, depth: usize, setup: Setup) -> Verdict {
    fn walk(ls: &Lockstep, path: &mut Vec<Op>, left: usize, stats: &mut FuzzStats) -> Result<(), ()> {
        if left == 0 {
            stats.sequences += 1;
            stats.merge(&FuzzStats {
                sequences: 0,
                ops: 0,
                allocs: 0,
                frees: 0,
                retired_bins: 0,
                final_live: 0,
                ..ls.stats.clone()
            });
            return Ok(());
        }
        let live = ls.live_count();
        let ops = std::iter::once(Op::Alloc)
            .chain((0..live).map(Op::Free))
            .chain(std::iter::once(Op::Retire));
        for op in ops {
            let mut next = ls.clone();
            path.push(op);
            stats.ops += 1;
            next.apply(op).map_err(|_| ())?;
            walk(&next, path, left - 1, stats)?;
            path.pop();
        }
        Ok(())
    }

    let mut stats = FuzzStats::default();
    let mut path = Vec::with_capacity(depth);
    let root = Lockstep::new(bin_capacity, setup);
    match walk(&root, &mut path, depth, &mut stats) {
        Ok(()) => Verdict::Pass(stats),
        Err(()) => {
            let cfg = FuzzConfig {
                seed: 0,
                op_count: depth,
                bin_capacity,
                mode: Mode::Exhaustive { depth },
                setup,
            };
            fail(&cfg, &path)
        }
    }
}

/// Number of op sequences of length `depth` the exhaustive walk visits.
/// Independent of the pool: counts paths over the live-element count.
pub fn exhaustive_sequence_count(depth: usize) -> u64 {
    fn count(d: usize, live: usize, memo: &mut Vec<Vec<Option<u64>>>) -> u64 {
        if d == 0 {
            return 1;
        }
        if let Some(v) = memo[d][live] {
            return v;
        }
        let mut v = count(d - 1, live + 1, memo) + count(d - 1, live, memo);
        if live > 0 {
            v += live as u64 * count(d - 1, live - 1, memo);
        }
        memo[d][live] = Some(v);
        v
    }
    let mut memo = vec![vec![None; depth + 2]; depth + 1];
    count(depth, 0, &mut memo)
}

fn fuzz_concurrent(cfg: &FuzzConfig, threads: usize) -> Verdict {
    let threads = threads.max(1);
    let pool = match SharedPool::new(FUZZ_PAYLOAD, cfg.bin_capacity) {
        Ok(p) => p,
        Err(e) => return concurrent_fail(cfg, format!("cannot create pool: {e}")),
    };
    let mailbox: Mutex<Vec<(Handle, u64)>> = Mutex::new(Vec::new());
    let per_thread = cfg.op_count / threads;
    let max_live = (cfg.bin_capacity as usize * 2).clamp(16, 4096);

    let results: Vec<Result<(Vec<(Handle, u64)>, FuzzStats), String>> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let pool = &pool;
                let mailbox = &mailbox;
                let ops = per_thread + usize::from(t < cfg.op_count % threads);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut live: Vec<(Handle, u64)> = Vec::new();
                    let mut stats = FuzzStats::default();
                    let mut counter = 0u64;
                    let mut p_alloc = 0.5;
                    for step in 0..ops {
                        if step % 512 == 0 {
                            p_alloc = [0.3, 0.5, 0.7][rng.random_range(0..3)];
                        }
                        stats.ops += 1;
                        let roll: f64 = rng.random();
                        if roll < 0.0005 {
                            stats.retired_bins += pool.retire_empty_bins() as u64;
                        } else if roll < 0.03 && !live.is_empty() {
                            let k = rng.random_range(0..live.len());
                            mailbox.lock().push(live.swap_remove(k));
                        } else if roll < 0.06 {
                            let taken = mailbox.lock().pop();
                            if let Some((h, tag)) = taken {
                                check_and_free(pool, h, tag)?;
                                stats.frees += 1;
                            }
                        } else if live.is_empty() || (live.len() < max_live && rng.random_bool(p_alloc)) {
                            counter += 1;
                            let tag = (t as u64 + 1) << 40 | counter;
                            let mut payload = [0u64; 3];
                            fill_payload(&mut payload, tag);
                            let bytes: Vec<u8> = payload.iter().flat_map(|w| w.to_ne_bytes()).collect();
                            let h = pool.allocate_with(&bytes).map_err(|e| format!("allocate: {e}"))?;
                            live.push((h, tag));
                            stats.allocs += 1;
                        } else {
                            let k = rng.random_range(0..live.len());
                            let (h, tag) = live.swap_remove(k);
                            check_and_free(pool, h, tag)?;
                            stats.frees += 1;
                        }
                        stats.max_live = stats.max_live.max(live.len());
                    }
                    Ok((live, stats))
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().expect("fuzz worker panicked")).collect()
    });

    let mut stats = FuzzStats::default();
    let mut expected: Vec<(Handle, u64)> = mailbox.into_inner();
    for r in results {
        match r {
            Ok((live, s)) => {
                stats.merge(&s);
                expected.extend(live);
            }
            Err(e) => return concurrent_fail(cfg, e),
        }
    }

    let handles: HashSet<Handle> = expected.iter().map(|(h, _)| *h).collect();
    if handles.len() != expected.len() {
        return concurrent_fail(cfg, "two live elements share a handle".into());
    }
    let appended = pool.bins_appended();
    let pool = pool.into_pool();
    for (n, bin) in pool.bins().enumerate() {
        let report = scan_validity(bin);
        if !report.is_valid() {
            return concurrent_fail(cfg, format!("bin {} invalid after run: {report}", n + 1));
        }
    }
    let mut want: Vec<(Handle, u64)> = expected;
    let mut got: Vec<(Handle, u64)> = pool
        .iter()
        .map(|(h, b)| (h, u64::from_ne_bytes(b[..8].try_into().unwrap())))
        .collect();
    want.sort_unstable();
    got.sort_unstable();
    if want != got {
        return concurrent_fail(
            cfg,
            format!("final live set: pool {} elements, threads {}", got.len(), want.len()),
        );
    }
    stats.final_live = got.len();
    stats.max_bins = appended;
    Verdict::Pass(stats)
}

fn check_and_free(pool: &SharedPool, h: Handle, tag: u64) -> Result<(), String> {
    let bytes = pool.read_payload(h).map_err(|e| format!("read {h:?}: {e}"))?;
    let first = u64::from_ne_bytes(bytes[..8].try_into().unwrap());
    if first != tag {
        return Err(format!("payload of {h:?} is {first:#x}, expected {tag:#x}"));
    }
    pool.deallocate(h).map_err(|e| format!("deallocate {h:?}: {e}"))
}

fn concurrent_fail(cfg: &FuzzConfig, message: String) -> Verdict {
    Verdict::Fail(Box::new(Divergence {
        seed: cfg.seed,
        op_count: cfg.op_count,
        bin_capacity: cfg.bin_capacity,
        message,
        trace: Trace::default(),
    }))
}

/// Faults with exactly one correction disabled, for each correction.
pub fn single_faults() -> impl Iterator<Item = (Correction, Faults)> {
    Correction::ALL
        .into_iter()
        .map(|c| (c, Faults::NONE.disable(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GUARDED: Setup = Setup {
        faults: Faults::NONE,
        free_top: FreeTopCheck::Guarded,
    };

    fn mutant(faults: Faults) -> Setup {
        Setup { faults, ..GUARDED }
    }

    #[test]
    fn generated_ops_are_valid() {
        let ops = generate_ops(3, 5000, 4);
        let mut live = 0usize;
        for op in ops {
            match op {
                Op::Alloc => live += 1,
                Op::Free(k) => {
                    assert!(k < live);
                    live -= 1;
                }
                Op::Retire => {}
            }
        }
        assert_eq!(generate_ops(3, 100, 4), generate_ops(3, 100, 4));
    }

    #[test]
    fn full_free_top_check_fires_on_first_fresh_top() {
        let v = fuzz(&FuzzConfig::sequential(0, 100, 4));
        let d = v.divergence().expect("stale prev of a fresh slot");
        assert_eq!(d.trace.to_string(), "A\n");
        assert!(d.message.contains("FreeTop"), "{d}");
    }

    #[test]
    fn short_sequential_runs_pass() {
        for cap in [1, 2, 4, 64] {
            let cfg = FuzzConfig::sequential(1, 3000, cap).with_free_top(FreeTopCheck::Guarded);
            let v = fuzz(&cfg);
            assert!(v.is_pass(), "{}", v.divergence().unwrap());
        }
    }

    #[test]
    fn exhaustive_shallow() {
        let cfg = FuzzConfig::exhaustive(3, 6).with_free_top(FreeTopCheck::Guarded);
        let v = fuzz(&cfg);
        let s = v.stats().unwrap_or_else(|| panic!("{}", v.divergence().unwrap()));
        assert_eq!(s.sequences, 3 * exhaustive_sequence_count(6));
    }

    #[test]
    fn sequence_count_small_depths() {
        // depth 1: A, R. depth 2: AA AF0 AR RA RR.
        assert_eq!(exhaustive_sequence_count(1), 2);
        assert_eq!(exhaustive_sequence_count(2), 5);
    }

    #[test]
    fn disabled_correction_is_caught_and_minimized() {
        for (c, faults) in single_faults() {
            let v = exhaustive(4, 4, mutant(faults));
            let d = v.divergence().unwrap_or_else(|| panic!("{c:?} not detected"));
            assert!(d.trace.len() <= 4, "{c:?}: {d}");
            assert!(replay(&d.trace, 4, mutant(faults)).is_err());
            assert!(replay(&d.trace, 4, GUARDED).is_ok());
        }
    }

    #[test]
    fn replay_reports_failing_index() {
        let t: Trace = "A\nA\nA\nF 1\nF 1\n".parse().unwrap();
        let (i, _) = replay(&t, 4, mutant(Faults::NONE.disable(Correction::FreePrev))).unwrap_err();
        assert_eq!(i, 4);
        assert!(replay(&t, 4, GUARDED).is_ok());
    }

    #[test]
    fn concurrent_small() {
        let v = fuzz(&FuzzConfig::concurrent(5, 20_000, 8, 3));
        assert!(v.is_pass(), "{}", v.divergence().unwrap());
    }
}
