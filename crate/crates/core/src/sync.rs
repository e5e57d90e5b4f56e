//! Thread-safe pool.
//!
//! The bin list sits behind a reader-writer lock and every bin behind its
//! own mutex. Allocation holds the list lock in shared mode and only ever
//! *tries* bin locks: a thread first tries the bin it allocated from last
//! time, then walks the other bins skipping any that are full or locked.
//! Only when nothing is usable does it take the list lock exclusively, and
//! then it appends a bin only if every bin is still full. With one bin per
//! thread in steady state, threads never wait on each other.
//!
//! Deallocation holds the list lock in shared mode and blocks on the owning
//! bin's mutex. Retirement takes the list lock exclusively.
//!
//! Iteration is not synchronized with mutation. Use
//! [`SharedPool::for_each_live`], [`SharedPool::snapshot`] or
//! [`SharedPool::into_pool`], which take the whole pool exclusively.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::PoisonError;

use crossbeam_utils::sync::{ShardedLock, ShardedLockReadGuard, ShardedLockWriteGuard};
use parking_lot::Mutex;
use thread_local::ThreadLocal;

use crate::bin::{Bin, SlotLayout, MAX_CAPACITY};
use crate::error::{PoolError, Result};
use crate::list::{BinId, BinList};
use crate::pool::{Handle, Pool};

const NO_BIN: u64 = u64::MAX;

/// Pool safe for concurrent allocation, deallocation and retirement.
pub struct SharedPool {
    bins: ShardedLock<BinList<Mutex<Bin>>>,
    // Last bin each thread allocated from. Written only while holding the
    // list lock (shared for the owning thread, exclusive for retirement).
    affinity: ThreadLocal<AtomicU64>,
    layout: SlotLayout,
    bin_capacity: u32,
    appended: AtomicUsize,
    exclusive_entries: AtomicUsize,
}

impl SharedPool {
    pub fn new(payload_size: usize, bin_capacity: u32) -> Result<Self> {
        if bin_capacity == 0 {
            return Err(PoolError::Argument("bin capacity must be at least 1"));
        }
        if bin_capacity > MAX_CAPACITY {
            return Err(PoolError::Size(bin_capacity as u64));
        }
        Ok(SharedPool {
            bins: ShardedLock::new(BinList::default()),
            affinity: ThreadLocal::new(),
            layout: SlotLayout::new(payload_size)?,
            bin_capacity,
            appended: AtomicUsize::new(0),
            exclusive_entries: AtomicUsize::new(0),
        })
    }

    pub fn payload_size(&self) -> usize {
        self.layout.payload_size()
    }

    pub fn bin_capacity(&self) -> u32 {
        self.bin_capacity
    }

    fn read(&self) -> ShardedLockReadGuard<'_, BinList<Mutex<Bin>>> {
        self.bins.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> ShardedLockWriteGuard<'_, BinList<Mutex<Bin>>> {
        self.bins.write().unwrap_or_else(PoisonError::into_inner)
    }

    fn my_affinity(&self) -> &AtomicU64 {
        self.affinity.get_or(|| AtomicU64::new(NO_BIN))
    }

    /// Bin the calling thread allocated from most recently, if it still
    /// exists.
    pub fn affinity(&self) -> Option<BinId> {
        let bits = self.affinity.get()?.load(Ordering::Relaxed);
        (bits != NO_BIN).then(|| BinId::from_bits(bits))
    }

    pub fn bin_count(&self) -> usize {
        self.read().len()
    }

    /// Bins appended over the pool's lifetime.
    pub fn bins_appended(&self) -> usize {
        self.appended.load(Ordering::Relaxed)
    }

    /// How often allocation fell back to the exclusive list lock.
    pub fn exclusive_entries(&self) -> usize {
        self.exclusive_entries.load(Ordering::Relaxed)
    }

    pub fn allocate(&self) -> Result<Handle> {
        self.allocate_and(|_| ())
    }

    /// Allocates and copies `payload` into the slot before the bin lock is
    /// released.
    pub fn allocate_with(&self, payload: &[u8]) -> Result<Handle> {
        if payload.len() != self.layout.payload_size() {
            return Err(PoolError::PayloadSize {
                expected: self.layout.payload_size(),
                found: payload.len(),
            });
        }
        self.allocate_and(|bytes| bytes.copy_from_slice(payload))
    }

    fn allocate_and<F: FnOnce(&mut [u8])>(&self, init: F) -> Result<Handle> {
        let affinity = self.my_affinity();
        let mut init = Some(init);
        let mut take = |bin: &mut Bin, id: BinId| -> Result<Handle> {
            let slot = bin.allocate()?;
            if let Some(f) = init.take() {
                f(bin.payload_mut_unchecked(slot));
            }
            affinity.store(id.to_bits(), Ordering::Relaxed);
            Ok(Handle::new(id, slot))
        };

        {
            let list = self.read();
            let mine = BinId::from_bits(affinity.load(Ordering::Relaxed));
            if let Some(m) = list.get(mine) {
                if let Some(mut bin) = m.try_lock() {
                    if !bin.is_full() {
                        return take(&mut bin, mine);
                    }
                }
            }
            // Walk the other bins once, starting after our own.
            let start = list
                .next(mine)
                .or_else(|| list.head())
                .filter(|&id| id != mine);
            if let Some(start) = start {
                let mut id = start;
                loop {
                    if let Some(mut bin) = list.get(id).unwrap().try_lock() {
                        if !bin.is_full() {
                            return take(&mut bin, id);
                        }
                    }
                    id = list.next(id).or_else(|| list.head()).unwrap();
                    if id == start || id == mine {
                        break;
                    }
                }
            }
        }

        let mut list = self.write();
        self.exclusive_entries.fetch_add(1, Ordering::Relaxed);
        // Another thread may have freed or appended while we waited.
        let ids: Vec<BinId> = list.ids().collect();
        for id in ids {
            let bin = list.get_mut(id).unwrap().get_mut();
            if !bin.is_full() {
                return take(bin, id);
            }
        }
        let bin = Bin::new(self.bin_capacity, self.layout.payload_size())?;
        let id = list.push_back(Mutex::new(bin));
        self.appended.fetch_add(1, Ordering::Relaxed);
        take(list.get_mut(id).unwrap().get_mut(), id)
    }

    /// Frees `h`. Any thread may free any handle.
    pub fn deallocate(&self, h: Handle) -> Result<()> {
        let list = self.read();
        let m = list.get(h.bin()).ok_or(PoolError::StaleHandle)?;
        let mut bin = m.lock();
        bin.deallocate(h.slot())
    }

    /// Releases every empty bin and forgets thread affinities that pointed
    /// at them.
    pub fn retire_empty_bins(&self) -> usize {
        let mut list = self.write();
        let gone = list.remove_where(|m| m.get_mut().is_empty());
        if !gone.is_empty() {
            for slot in self.affinity.iter() {
                let id = BinId::from_bits(slot.load(Ordering::Relaxed));
                if gone.contains(&id) {
                    slot.store(NO_BIN, Ordering::Relaxed);
                }
            }
        }
        gone.len()
    }

    /// Copy of the payload behind `h`.
    pub fn read_payload(&self, h: Handle) -> Result<Vec<u8>> {
        let list = self.read();
        let m = list.get(h.bin()).ok_or(PoolError::StaleHandle)?;
        let bin = m.lock();
        bin.payload(h.slot()).map(<[u8]>::to_vec)
    }

    pub fn write_payload(&self, h: Handle, payload: &[u8]) -> Result<()> {
        if payload.len() != self.layout.payload_size() {
            return Err(PoolError::PayloadSize {
                expected: self.layout.payload_size(),
                found: payload.len(),
            });
        }
        let list = self.read();
        let m = list.get(h.bin()).ok_or(PoolError::StaleHandle)?;
        let mut bin = m.lock();
        bin.payload_mut(h.slot())?.copy_from_slice(payload);
        Ok(())
    }

    /// Visits every live element in bin order while holding the whole pool
    /// exclusively.
    pub fn for_each_live<F: FnMut(Handle, &[u8])>(&self, mut f: F) {
        let mut list = self.write();
        let ids: Vec<BinId> = list.ids().collect();
        for id in ids {
            let bin = list.get_mut(id).unwrap().get_mut();
            for i in bin.iter() {
                f(Handle::new(id, i), bin.payload_unchecked(i));
            }
        }
    }

    /// Live element count, taken exclusively.
    pub fn len(&self) -> usize {
        let mut list = self.write();
        let ids: Vec<BinId> = list.ids().collect();
        ids.into_iter()
            .map(|id| list.get_mut(id).unwrap().get_mut().len() as usize)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Single-threaded copy of the current state with identical bin ids.
    pub fn snapshot(&self) -> Pool {
        let list = self.write();
        let copy = clone_list(&list);
        Pool::from_parts(copy, self.layout, self.bin_capacity)
    }

    pub fn into_pool(self) -> Pool {
        let list = self
            .bins
            .into_inner()
            .unwrap_or_else(PoisonError::into_inner);
        Pool::from_parts(list.map(Mutex::into_inner), self.layout, self.bin_capacity)
    }
}

fn clone_list(list: &BinList<Mutex<Bin>>) -> BinList<Bin> {
    // Called under the exclusive list lock, so no bin lock is held elsewhere.
    list.clone_with(|m| m.lock().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn single_thread_matches_pool() {
        let sp = SharedPool::new(8, 4).unwrap();
        let mut p = Pool::new(8, 4).unwrap();
        let mut live_sp = Vec::new();
        let mut live_p = Vec::new();
        for step in 0..200u32 {
            if step % 3 == 2 && !live_p.is_empty() {
                let k = (step as usize * 7) % live_p.len();
                sp.deallocate(live_sp.remove(k)).unwrap();
                p.deallocate(live_p.remove(k)).unwrap();
            } else if step % 17 == 0 {
                assert_eq!(sp.retire_empty_bins(), p.retire_empty_bins());
            } else {
                let a = sp.allocate().unwrap();
                let b = p.allocate().unwrap();
                assert_eq!(a, b, "step {step}");
                live_sp.push(a);
                live_p.push(b);
            }
        }
    }

    #[test]
    fn affinity_cleared_on_retire() {
        let sp = SharedPool::new(8, 4).unwrap();
        let h = sp.allocate().unwrap();
        assert_eq!(sp.affinity(), Some(h.bin()));
        sp.deallocate(h).unwrap();
        assert_eq!(sp.retire_empty_bins(), 1);
        assert_eq!(sp.affinity(), None);
        assert_eq!(sp.deallocate(h), Err(PoolError::StaleHandle));
    }

    #[test]
    fn retire_noop_when_busy() {
        let sp = SharedPool::new(8, 2).unwrap();
        for _ in 0..4 {
            sp.allocate().unwrap();
        }
        assert_eq!(sp.retire_empty_bins(), 0);
        assert_eq!(sp.bin_count(), 2);
    }

    #[test]
    fn cross_thread_free() {
        let sp = Arc::new(SharedPool::new(8, 16).unwrap());
        let hs: Vec<Handle> = (0..40).map(|_| sp.allocate().unwrap()).collect();
        let sp2 = Arc::clone(&sp);
        let freed = hs.clone();
        std::thread::spawn(move || {
            for h in freed.into_iter().step_by(2) {
                sp2.deallocate(h).unwrap();
            }
        })
        .join()
        .unwrap();
        assert_eq!(sp.len(), 20);
        let live: HashSet<Handle> = sp.snapshot().iter().map(|(h, _)| h).collect();
        let expect: HashSet<Handle> = hs.into_iter().skip(1).step_by(2).collect();
        assert_eq!(live, expect);
    }

    #[test]
    fn double_free_race() {
        for _ in 0..50 {
            let sp = Arc::new(SharedPool::new(8, 4).unwrap());
            let h = sp.allocate().unwrap();
            let results: Vec<Result<()>> = std::thread::scope(|s| {
                let a = s.spawn(|| sp.deallocate(h));
                let b = s.spawn(|| sp.deallocate(h));
                vec![a.join().unwrap(), b.join().unwrap()]
            });
            assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
            assert!(results.contains(&Err(PoolError::DoubleFree(h.slot()))));
        }
    }

    #[test]
    fn payload_access() {
        let sp = SharedPool::new(4, 4).unwrap();
        let h = sp.allocate_with(&[9, 8, 7, 6]).unwrap();
        assert_eq!(sp.read_payload(h).unwrap(), vec![9, 8, 7, 6]);
        sp.write_payload(h, &[1, 1, 1, 1]).unwrap();
        let mut seen = Vec::new();
        sp.for_each_live(|_, p| seen.push(p.to_vec()));
        assert_eq!(seen, vec![vec![1, 1, 1, 1]]);
        assert!(matches!(sp.allocate_with(&[1]), Err(PoolError::PayloadSize { .. })));
    }
}
