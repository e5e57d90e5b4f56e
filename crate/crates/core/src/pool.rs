//! Multi-bin pool with handle-based allocation and ordered traversal.
//!
//! Bins are kept in a doubly linked list. Stored links never cross a bin
//! boundary; cursors hop to the neighboring bin when a step lands on a
//! pseudo slot, so appending or retiring bins never invalidates links
//! inside other bins.
//!
//! Cursors are plain values. Whether a cursor stays meaningful across
//! mutations elsewhere in the pool is unspecified; take cursors after the
//! last mutation you care about.

use std::fmt;

use crate::bin::{Bin, NoProbe, Probe, SlotLayout, MAX_CAPACITY};
use crate::error::{PoolError, Result};
use crate::list::{BinId, BinList};

/// Locator of one assigned slot: owning bin plus slot index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle {
    bin: BinId,
    slot: u32,
}

impl Handle {
    pub(crate) fn new(bin: BinId, slot: u32) -> Self {
        Handle { bin, slot }
    }

    pub fn bin(&self) -> BinId {
        self.bin
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({:?}, slot {})", self.bin, self.slot)
    }
}

/// Iteration position. Dereferenceable cursors sit on an assigned user
/// slot; the end cursor sits on the trailing pseudo slot of the last bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cursor {
    bin: BinId,
    slot: u32,
}

impl Cursor {
    /// Begin and end of a pool (or partition run) without bins.
    pub const EMPTY: Cursor = Cursor {
        bin: BinId::NONE,
        slot: 0,
    };

    pub fn bin(&self) -> BinId {
        self.bin
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }
}

impl From<Handle> for Cursor {
    fn from(h: Handle) -> Self {
        Cursor {
            bin: h.bin,
            slot: h.slot,
        }
    }
}

/// Half-open cursor range produced by [`Pool::partition`]. `end` is the
/// trailing pseudo slot of the last bin in the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CursorRange {
    pub begin: Cursor,
    pub end: Cursor,
}

impl CursorRange {
    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }
}

/// Single-threaded pool of fixed-size slots.
#[derive(Clone)]
pub struct Pool {
    list: BinList<Bin>,
    mru: Option<BinId>,
    layout: SlotLayout,
    bin_capacity: u32,
}

/// Per-bin bookkeeping outside slot storage, counted by
/// [`Pool::bytes_reserved`].
pub const BIN_METADATA_BYTES: usize = std::mem::size_of::<Bin>() + 3 * std::mem::size_of::<u32>();

impl Pool {
    pub fn new(payload_size: usize, bin_capacity: u32) -> Result<Self> {
        if bin_capacity == 0 {
            return Err(PoolError::Argument("bin capacity must be at least 1"));
        }
        if bin_capacity > MAX_CAPACITY {
            return Err(PoolError::Size(bin_capacity as u64));
        }
        Ok(Pool {
            list: BinList::default(),
            mru: None,
            layout: SlotLayout::new(payload_size)?,
            bin_capacity,
        })
    }

    pub(crate) fn from_parts(list: BinList<Bin>, layout: SlotLayout, bin_capacity: u32) -> Self {
        Pool {
            list,
            mru: None,
            layout,
            bin_capacity,
        }
    }

    pub fn payload_size(&self) -> usize {
        self.layout.payload_size()
    }

    pub fn layout(&self) -> SlotLayout {
        self.layout
    }

    pub fn bin_capacity(&self) -> u32 {
        self.bin_capacity
    }

    pub fn bin_count(&self) -> usize {
        self.list.len()
    }

    /// Number of live elements. Linear in the bin count.
    pub fn len(&self) -> usize {
        self.bins().map(|b| b.len() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bins().all(Bin::is_empty)
    }

    /// Bin ids in list order.
    pub fn bin_ids(&self) -> impl Iterator<Item = BinId> + '_ {
        self.list.ids()
    }

    /// Bins in list order.
    pub fn bins(&self) -> impl Iterator<Item = &Bin> + '_ {
        self.list.ids().map(|id| self.list.get(id).unwrap())
    }

    pub fn bin(&self, id: BinId) -> Option<&Bin> {
        self.list.get(id)
    }

    /// Zero-based position of a bin in list order. Linear in the bin count.
    pub fn bin_position(&self, id: BinId) -> Option<usize> {
        self.list.position(id)
    }

    /// Bin the next allocation starts scanning from.
    pub fn most_recent_bin(&self) -> Option<BinId> {
        self.mru
    }

    /// Slot storage plus per-bin bookkeeping.
    pub fn bytes_reserved(&self) -> usize {
        self.bins()
            .map(|b| b.bytes_reserved() + BIN_METADATA_BYTES)
            .sum()
    }

    fn new_bin(&self) -> Result<Bin> {
        Bin::new(self.bin_capacity, self.layout.payload_size())
    }

    #[inline]
    pub fn allocate(&mut self) -> Result<Handle> {
        self.allocate_probed(&mut NoProbe)
    }

    /// Allocates and copies `payload` into the new slot.
    pub fn allocate_with(&mut self, payload: &[u8]) -> Result<Handle> {
        self.check_payload_len(payload)?;
        let h = self.allocate()?;
        self.list
            .get_mut(h.bin)
            .unwrap()
            .payload_mut_unchecked(h.slot)
            .copy_from_slice(payload);
        Ok(h)
    }

    /// Scans for a non-full bin starting at the most recently used one and
    /// wrapping around; appends a fresh bin when all are full.
    pub fn allocate_probed<P: Probe>(&mut self, probe: &mut P) -> Result<Handle> {
        let start = self
            .mru
            .filter(|&id| self.list.contains(id))
            .or_else(|| self.list.head());
        if let Some(start) = start {
            let mut id = start;
            loop {
                let bin = self.list.get_mut(id).unwrap();
                if !bin.is_full() {
                    let slot = bin.allocate_probed(probe)?;
                    self.mru = Some(id);
                    return Ok(Handle::new(id, slot));
                }
                id = self.list.next(id).or_else(|| self.list.head()).unwrap();
                if id == start {
                    break;
                }
            }
        }
        let bin = self.new_bin()?;
        let id = self.list.push_back(bin);
        let slot = self.list.get_mut(id).unwrap().allocate_probed(probe)?;
        self.mru = Some(id);
        Ok(Handle::new(id, slot))
    }

    pub fn deallocate(&mut self, h: Handle) -> Result<()> {
        self.deallocate_probed(h, &mut NoProbe)
    }

    /// Frees the slot behind `h`. The bin stays in the pool even when it
    /// becomes empty; see [`Pool::retire_empty_bins`].
    pub fn deallocate_probed<P: Probe>(&mut self, h: Handle, probe: &mut P) -> Result<()> {
        self.list
            .get_mut(h.bin)
            .ok_or(PoolError::StaleHandle)?
            .deallocate_probed(h.slot, probe)
    }

    /// Unlinks and releases every empty bin. Returns how many were released.
    pub fn retire_empty_bins(&mut self) -> usize {
        let gone = self.list.remove_where(|b| b.is_empty());
        if self.mru.is_some_and(|m| !self.list.contains(m)) {
            self.mru = None;
        }
        gone.len()
    }

    fn check_payload_len(&self, payload: &[u8]) -> Result<()> {
        if payload.len() != self.layout.payload_size() {
            return Err(PoolError::PayloadSize {
                expected: self.layout.payload_size(),
                found: payload.len(),
            });
        }
        Ok(())
    }

    pub fn get(&self, h: Handle) -> Result<&[u8]> {
        self.list.get(h.bin).ok_or(PoolError::StaleHandle)?.payload(h.slot)
    }

    pub fn get_mut(&mut self, h: Handle) -> Result<&mut [u8]> {
        self.list
            .get_mut(h.bin)
            .ok_or(PoolError::StaleHandle)?
            .payload_mut(h.slot)
    }

    pub fn words(&self, h: Handle) -> Result<&[u64]> {
        self.list.get(h.bin).ok_or(PoolError::StaleHandle)?.words(h.slot)
    }

    pub fn words_mut(&mut self, h: Handle) -> Result<&mut [u64]> {
        self.list
            .get_mut(h.bin)
            .ok_or(PoolError::StaleHandle)?
            .words_mut(h.slot)
    }

    // ---------------------------------------------------------------------
    // Cursors
    // ---------------------------------------------------------------------

    /// First live element in bin order, or [`Pool::end`] when there is none.
    pub fn begin(&self) -> Cursor {
        match self.list.head() {
            Some(head) => self.forward_from(head, 0, None),
            None => Cursor::EMPTY,
        }
    }

    /// Trailing pseudo slot of the last bin.
    pub fn end(&self) -> Cursor {
        match self.list.tail() {
            Some(t) => Cursor {
                bin: t,
                slot: self.list.get(t).unwrap().end_slot(),
            },
            None => Cursor::EMPTY,
        }
    }

    /// Steps forward from assigned slot `slot` of bin `id`, hopping bins,
    /// and stops at the trailing pseudo slot of `stop` (or the last bin).
    fn forward_from(&self, mut id: BinId, mut slot: u32, stop: Option<BinId>) -> Cursor {
        loop {
            let bin = self.list.get(id).unwrap();
            let j = bin.step_next(slot);
            if j != bin.end_slot() {
                return Cursor { bin: id, slot: j };
            }
            match self.list.next(id) {
                Some(n) if Some(id) != stop => {
                    id = n;
                    slot = 0;
                }
                _ => return Cursor { bin: id, slot: j },
            }
        }
    }

    fn cursor_bin(&self, c: Cursor) -> Result<&Bin> {
        self.list.get(c.bin).ok_or(PoolError::StaleHandle)
    }

    /// Next live element after `c`, or [`Pool::end`].
    pub fn advance(&self, c: Cursor) -> Result<Cursor> {
        if c.bin == BinId::NONE {
            return Err(PoolError::AtEnd);
        }
        let bin = self.cursor_bin(c)?;
        if c.slot == bin.end_slot() {
            // End of a partition run: continue in the following bin.
            return match self.list.next(c.bin) {
                Some(n) => Ok(self.forward_from(n, 0, None)),
                None => Err(PoolError::AtEnd),
            };
        }
        bin.next_assigned(c.slot)?;
        Ok(self.forward_from(c.bin, c.slot, None))
    }

    /// Previous live element before `c`.
    pub fn retreat(&self, c: Cursor) -> Result<Cursor> {
        if c.bin == BinId::NONE {
            return Err(PoolError::AtBegin);
        }
        let bin = self.cursor_bin(c)?;
        if c.slot == 0 || bin.is_free(c.slot) {
            return Err(PoolError::NotAssigned(c.slot));
        }
        let (mut id, mut slot) = (c.bin, c.slot);
        loop {
            let j = self.list.get(id).unwrap().step_prev(slot);
            if j != 0 {
                return Ok(Cursor { bin: id, slot: j });
            }
            let p = self.list.prev(id).ok_or(PoolError::AtBegin)?;
            id = p;
            slot = self.list.get(p).unwrap().end_slot();
        }
    }

    fn deref_bin(&self, c: Cursor) -> Result<&Bin> {
        if c.bin == BinId::NONE {
            return Err(PoolError::AtEnd);
        }
        let bin = self.cursor_bin(c)?;
        if c.slot == bin.end_slot() {
            return Err(PoolError::AtEnd);
        }
        Ok(bin)
    }

    pub fn read(&self, c: Cursor) -> Result<&[u8]> {
        self.deref_bin(c)?.payload(c.slot)
    }

    pub fn write(&mut self, c: Cursor, payload: &[u8]) -> Result<()> {
        self.check_payload_len(payload)?;
        self.deref_bin(c)?;
        self.list
            .get_mut(c.bin)
            .unwrap()
            .payload_mut(c.slot)?
            .copy_from_slice(payload);
        Ok(())
    }

    /// Handle of the element under a dereferenceable cursor.
    pub fn handle_at(&self, c: Cursor) -> Result<Handle> {
        self.deref_bin(c)?.payload(c.slot)?;
        Ok(Handle::new(c.bin, c.slot))
    }

    /// Live elements in (bin position, slot index) order.
    pub fn iter(&self) -> Iter<'_> {
        self.iter_range(&CursorRange {
            begin: self.begin(),
            end: self.end(),
        })
    }

    /// Live elements from `range.begin` up to the end of `range.end`'s bin.
    pub fn iter_range(&self, range: &CursorRange) -> Iter<'_> {
        if range.is_empty() || range.begin.bin == BinId::NONE {
            return Iter {
                pool: self,
                bin: None,
                id: BinId::NONE,
                pos: 0,
                stop: BinId::NONE,
            };
        }
        let bin = self.list.get(range.begin.bin);
        // One step back so the first forward step yields `begin` itself.
        let pos = bin.map_or(0, |b| b.step_prev(range.begin.slot));
        Iter {
            pool: self,
            bin,
            id: range.begin.bin,
            pos,
            stop: range.end.bin,
        }
    }

    /// Calls `f` with the payload words of every live element, in order.
    #[inline]
    pub fn for_each_words_mut<F: FnMut(&mut [u64])>(&mut self, mut f: F) {
        for bin in self.list.values_mut_ordered() {
            bin.for_each_words_mut(&mut f);
        }
    }

    fn run_sizes(bins: usize, k: usize) -> impl Iterator<Item = usize> {
        (0..k).map(move |i| bins / k + usize::from(i < bins % k))
    }

    /// Splits the bin list into `k` contiguous runs whose bin counts differ
    /// by at most one, earlier runs taking the extra bins.
    pub fn partition(&self, k: usize) -> Result<Vec<CursorRange>> {
        if k == 0 {
            return Err(PoolError::Argument("partition count must be at least 1"));
        }
        let ids: Vec<BinId> = self.list.ids().collect();
        let mut out = Vec::with_capacity(k);
        let mut at = 0;
        for size in Self::run_sizes(ids.len(), k) {
            if size == 0 {
                out.push(CursorRange {
                    begin: Cursor::EMPTY,
                    end: Cursor::EMPTY,
                });
                continue;
            }
            let first = ids[at];
            let last = ids[at + size - 1];
            at += size;
            out.push(CursorRange {
                begin: self.forward_from(first, 0, Some(last)),
                end: Cursor {
                    bin: last,
                    slot: self.list.get(last).unwrap().end_slot(),
                },
            });
        }
        Ok(out)
    }

    /// Same split as [`Pool::partition`], handing out disjoint mutable runs
    /// that can be processed on separate threads.
    pub fn partition_mut(&mut self, k: usize) -> Result<Vec<BinRun<'_>>> {
        if k == 0 {
            return Err(PoolError::Argument("partition count must be at least 1"));
        }
        let mut bins = self.list.values_mut_ordered().into_iter();
        let n = bins.len();
        Ok(Self::run_sizes(n, k)
            .map(|size| BinRun {
                bins: bins.by_ref().take(size).collect(),
            })
            .collect())
    }
}

impl fmt::Debug for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pool")
            .field("layout", &self.layout)
            .field("bin_capacity", &self.bin_capacity)
            .field("bin_count", &self.bin_count())
            .finish()
    }
}

/// Forward iterator over `(Handle, payload)` pairs.
pub struct Iter<'a> {
    pool: &'a Pool,
    bin: Option<&'a Bin>,
    id: BinId,
    pos: u32,
    stop: BinId,
}

impl<'a> Iterator for Iter<'a> {
    type Item = (Handle, &'a [u8]);

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let bin = self.bin?;
            let j = bin.step_next(self.pos);
            if j != bin.end_slot() {
                self.pos = j;
                return Some((Handle::new(self.id, j), bin.payload_unchecked(j)));
            }
            if self.id == self.stop {
                self.bin = None;
                return None;
            }
            match self.pool.list.next(self.id) {
                Some(n) => {
                    self.id = n;
                    self.bin = self.pool.list.get(n);
                    self.pos = 0;
                }
                None => self.bin = None,
            }
        }
    }
}

/// A contiguous run of bins borrowed mutably from a pool.
pub struct BinRun<'a> {
    bins: Vec<&'a mut Bin>,
}

impl BinRun<'_> {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn len(&self) -> usize {
        self.bins.iter().map(|b| b.len() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|b| b.is_empty())
    }

    #[inline]
    pub fn for_each_words_mut<F: FnMut(&mut [u64])>(&mut self, mut f: F) {
        for bin in self.bins.iter_mut() {
            bin.for_each_words_mut(&mut f);
        }
    }

    pub fn for_each_payload<F: FnMut(&[u8])>(&self, mut f: F) {
        for bin in &self.bins {
            for i in bin.iter() {
                f(bin.payload_unchecked(i));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handles(pool: &Pool) -> Vec<Handle> {
        pool.iter().map(|(h, _)| h).collect()
    }

    #[test]
    fn create() {
        let p = Pool::new(24, 64_000).unwrap();
        assert_eq!(p.bin_count(), 0);
        assert!(matches!(Pool::new(24, 0), Err(PoolError::Argument(_))));
        assert!(matches!(Pool::new(0, 4), Err(PoolError::Argument(_))));
        let mut p = Pool::new(8, 4).unwrap();
        let h = p.allocate().unwrap();
        assert_eq!(p.bin(h.bin()).unwrap().slot_count(), 8);
    }

    #[test]
    fn allocation_grows_bins() {
        let mut p = Pool::new(8, 4).unwrap();
        let first = p.allocate().unwrap();
        assert_eq!(p.bin_position(first.bin()), Some(0));
        assert_eq!(first.slot(), 2);
        for _ in 0..4 {
            p.allocate().unwrap();
        }
        assert_eq!(p.bin_count(), 2);
    }

    #[test]
    fn alloc_free_alloc_same_handle() {
        let mut p = Pool::new(8, 4).unwrap();
        let a = p.allocate().unwrap();
        p.deallocate(a).unwrap();
        assert_eq!(p.allocate().unwrap(), a);
    }

    #[test]
    fn deallocate_rules() {
        let mut p = Pool::new(8, 4).unwrap();
        let a = p.allocate().unwrap();
        p.deallocate(a).unwrap();
        assert_eq!(p.iter().count(), 0);
        assert_eq!(p.deallocate(a), Err(PoolError::DoubleFree(2)));

        let mut p = Pool::new(8, 4).unwrap();
        let hs: Vec<_> = (0..8).map(|_| p.allocate().unwrap()).collect();
        for h in &hs[..4] {
            p.deallocate(*h).unwrap();
        }
        assert_eq!(p.bin_count(), 2);
    }

    #[test]
    fn retirement() {
        let mut p = Pool::new(8, 4).unwrap();
        let a = p.allocate().unwrap();
        p.deallocate(a).unwrap();
        assert_eq!(p.retire_empty_bins(), 1);
        assert_eq!(p.bin_count(), 0);
        assert_eq!(p.deallocate(a), Err(PoolError::StaleHandle));
        assert_eq!(p.retire_empty_bins(), 0);

        let hs: Vec<_> = (0..12).map(|_| p.allocate().unwrap()).collect();
        for h in &hs[4..8] {
            p.deallocate(*h).unwrap();
        }
        let before = handles(&p);
        assert_eq!(p.retire_empty_bins(), 1);
        assert_eq!(p.bin_count(), 2);
        assert_eq!(handles(&p), before);
        assert_eq!(p.bin_position(hs[11].bin()), Some(1));
    }

    #[test]
    fn cursors() {
        let mut p = Pool::new(8, 4).unwrap();
        assert_eq!(p.begin(), p.end());
        assert_eq!(p.begin(), Cursor::EMPTY);

        let a = p.allocate().unwrap();
        assert_eq!(p.handle_at(p.begin()).unwrap(), a);

        // element only in bin 2
        let mut p = Pool::new(8, 4).unwrap();
        let hs: Vec<_> = (0..5).map(|_| p.allocate().unwrap()).collect();
        for h in &hs[..4] {
            p.deallocate(*h).unwrap();
        }
        assert_eq!(p.handle_at(p.begin()).unwrap(), hs[4]);
        assert_eq!(p.advance(p.begin()).unwrap(), p.end());
        assert_eq!(p.advance(p.end()), Err(PoolError::AtEnd));
        assert_eq!(p.retreat(p.begin()), Err(PoolError::AtBegin));
    }

    #[test]
    fn cursor_steps_cross_bins() {
        let mut p = Pool::new(8, 4).unwrap();
        let hs: Vec<_> = (0..6).map(|_| p.allocate().unwrap()).collect();
        p.deallocate(hs[1]).unwrap();
        let c = Cursor::from(hs[0]);
        assert_eq!(p.handle_at(p.advance(c).unwrap()).unwrap(), hs[2]);
        let c = Cursor::from(hs[3]);
        let n = p.advance(c).unwrap();
        assert_eq!(p.handle_at(n).unwrap(), hs[4]);
        assert_eq!(p.retreat(n).unwrap(), c);
        assert_eq!(p.retreat(p.end()).unwrap(), Cursor::from(hs[5]));
    }

    #[test]
    fn read_write() {
        let mut p = Pool::new(4, 4).unwrap();
        let a = p.allocate().unwrap();
        let b = p.allocate().unwrap();
        p.write(a.into(), &[1, 2, 3, 4]).unwrap();
        p.write(b.into(), &[5, 6, 7, 8]).unwrap();
        assert_eq!(p.read(a.into()).unwrap(), &[1, 2, 3, 4]);
        assert_eq!(p.read(b.into()).unwrap(), &[5, 6, 7, 8]);
        assert_eq!(p.read(p.end()), Err(PoolError::AtEnd));
        assert!(matches!(p.write(a.into(), &[1]), Err(PoolError::PayloadSize { .. })));
        p.deallocate(a).unwrap();
        assert_eq!(p.read(a.into()), Err(PoolError::NotAssigned(2)));
    }

    #[test]
    fn partition_shapes() {
        let mut p = Pool::new(8, 4).unwrap();
        for _ in 0..12 {
            p.allocate().unwrap();
        }
        let parts = p.partition(2).unwrap();
        let counts: Vec<usize> = parts.iter().map(|r| p.iter_range(r).count()).collect();
        assert_eq!(counts, vec![8, 4]);

        let one = p.partition(1).unwrap();
        assert_eq!(one[0].begin, p.begin());
        assert_eq!(one[0].end, p.end());

        let many = p.partition(5).unwrap();
        assert_eq!(many.len(), 5);
        assert_eq!(many.iter().filter(|r| r.is_empty()).count(), 2);
        assert!(matches!(p.partition(0), Err(PoolError::Argument(_))));

        let runs = p.partition_mut(2).unwrap();
        assert_eq!(runs.iter().map(BinRun::bin_count).collect::<Vec<_>>(), vec![2, 1]);
    }
}
