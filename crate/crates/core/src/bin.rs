//! A single bin: a contiguous run of fixed-size slots with an embedded
//! free-list and an embedded traversal structure.
//!
//! Slot `0` and slot `capacity + 3` are permanently assigned pseudo slots,
//! slot `1` and slot `capacity + 2` are permanently free pseudo slots. User
//! slots are `2..=capacity + 1`.
//!
//! Every free slot carries a pair of links to the nearest assigned slot
//! below and above it. Only the links of free slots that touch an assigned
//! slot have to be correct; the links of interior free slots are stale and
//! never read. Allocation and deallocation repair the boundary links with a
//! constant number of reads and writes, so stepping from one assigned slot
//! to the next is a single hop regardless of how many free slots lie in
//! between.
//!
//! Slot storage is split in two parallel arrays: the overlay words (payload
//! or links) and the 32-bit status words. The overlay stays 8-byte aligned
//! without padding the status word, so a slot costs exactly
//! `overlay + 4` bytes.

use std::fmt;

use crate::error::{PoolError, Result};

/// Most significant bit of a status word: set while the slot is free.
pub const FREE_FLAG: u32 = 1 << 31;

/// Free-list terminator. Never a valid slot index.
pub const END: u32 = FREE_FLAG - 1;

/// Largest number of user slots a bin may hold. Keeps every index,
/// including the trailing pseudo slot, strictly below [`END`].
pub const MAX_CAPACITY: u32 = FREE_FLAG - 6;

/// Bin capacity used when none is configured.
pub const DEFAULT_BIN_CAPACITY: u32 = 64_000;

/// Width of one traversal link in bytes.
pub const LINK_WIDTH: usize = 8;

/// Bytes per status word.
pub const STATUS_WIDTH: usize = 4;

/// Index of the first user slot in every bin.
pub const FIRST_USER_SLOT: u32 = 2;

const WORD: usize = std::mem::size_of::<u64>();

/// Free flag plus a 31-bit free-list link.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct StatusWord(u32);

impl StatusWord {
    /// Status of an assigned slot. The index bits are don't-care.
    pub const ASSIGNED: StatusWord = StatusWord(0);

    #[inline]
    pub const fn free(next_free: u32) -> Self {
        StatusWord(FREE_FLAG | (next_free & END))
    }

    #[inline]
    pub const fn from_raw(raw: u32) -> Self {
        StatusWord(raw)
    }

    #[inline]
    pub const fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn is_free(self) -> bool {
        self.0 & FREE_FLAG != 0
    }

    /// Next slot on the free-list, or [`END`]. Meaningless for assigned slots.
    #[inline]
    pub const fn next_free(self) -> u32 {
        self.0 & !FREE_FLAG
    }
}

impl fmt::Debug for StatusWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.is_free() {
            f.write_str("Assigned")
        } else if self.next_free() == END {
            f.write_str("Free(END)")
        } else {
            write!(f, "Free({})", self.next_free())
        }
    }
}

/// The traversal links held by a free slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Links {
    pub next: u32,
    pub prev: u32,
}

/// Byte geometry of one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotLayout {
    payload_size: usize,
    overlay_words: usize,
}

impl SlotLayout {
    pub fn new(payload_size: usize) -> Result<Self> {
        if payload_size == 0 {
            return Err(PoolError::Argument("payload size must be at least 1 byte"));
        }
        let overlay = payload_size.max(2 * LINK_WIDTH);
        Ok(SlotLayout {
            payload_size,
            overlay_words: overlay.div_ceil(WORD),
        })
    }

    #[inline]
    pub fn payload_size(&self) -> usize {
        self.payload_size
    }

    /// Number of 64-bit words a payload occupies.
    #[inline]
    pub fn payload_words(&self) -> usize {
        self.payload_size.div_ceil(WORD)
    }

    #[inline]
    pub fn overlay_words(&self) -> usize {
        self.overlay_words
    }

    #[inline]
    pub fn overlay_bytes(&self) -> usize {
        self.overlay_words * WORD
    }

    /// Alignment bytes added to the overlay beyond `max(payload, 2 links)`.
    pub fn padding(&self) -> usize {
        self.overlay_bytes() - self.payload_size.max(2 * LINK_WIDTH)
    }

    /// Total bytes per slot, padding included.
    pub fn footprint(&self) -> usize {
        self.overlay_bytes() + STATUS_WIDTH
    }
}

/// One of the four link repairs done by allocate/deallocate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Correction {
    /// Allocation: point the left free run's `next` at the new slot.
    AllocPrev,
    /// Allocation: point the right free run's `prev` at the new slot.
    AllocNext,
    /// Deallocation: extend the left free run's `next` past the freed slot.
    FreePrev,
    /// Deallocation: extend the right free run's `prev` past the freed slot.
    FreeNext,
}

impl Correction {
    pub const ALL: [Correction; 4] = [
        Correction::AllocPrev,
        Correction::AllocNext,
        Correction::FreePrev,
        Correction::FreeNext,
    ];

    const fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Set of disabled corrections. Only mutation tests disable anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Faults(u8);

impl Faults {
    pub const NONE: Faults = Faults(0);

    pub const fn disable(self, c: Correction) -> Self {
        Faults(self.0 | c.bit())
    }

    #[inline]
    pub const fn is_disabled(self, c: Correction) -> bool {
        self.0 & c.bit() != 0
    }
}

/// Observer threaded through allocate/deallocate.
///
/// [`NoProbe`] compiles to nothing. [`OpCounter`] tallies slot-field reads
/// and writes, and can carry [`Faults`] for mutation testing.
pub trait Probe {
    #[inline(always)]
    fn read(&mut self) {}
    #[inline(always)]
    fn write(&mut self) {}
    #[inline(always)]
    fn faults(&self) -> Faults {
        Faults::NONE
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Counts slot-field accesses of one operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub reads: u32,
    pub writes: u32,
    pub faults: Faults,
}

impl OpCounter {
    pub fn with_faults(faults: Faults) -> Self {
        OpCounter {
            faults,
            ..Default::default()
        }
    }
}

impl Probe for OpCounter {
    #[inline]
    fn read(&mut self) {
        self.reads += 1;
    }
    #[inline]
    fn write(&mut self) {
        self.writes += 1;
    }
    #[inline]
    fn faults(&self) -> Faults {
        self.faults
    }
}

/// A fixed-capacity block of slots.
///
/// Not synchronized: at most one mutating call at a time, and stepping must
/// not overlap a mutation. [`crate::SharedPool`] provides the locking.
#[derive(Clone)]
pub struct Bin {
    words: Box<[u64]>,
    status: Box<[u32]>,
    layout: SlotLayout,
    capacity: u32,
    free_head: u32,
    live: u32,
}

impl Bin {
    /// Creates an empty bin. Every free slot links to the two boundary
    /// pseudo slots and the free-list hands out user slots in ascending
    /// order.
    pub fn new(capacity: u32, payload_size: usize) -> Result<Self> {
        if capacity == 0 || capacity > MAX_CAPACITY {
            return Err(PoolError::Size(capacity as u64));
        }
        let layout = SlotLayout::new(payload_size)?;
        let slots = capacity as usize + 4;
        let last = capacity + 3;

        let mut status: Vec<u32> = Vec::new();
        status
            .try_reserve_exact(slots)
            .map_err(|_| PoolError::OutOfMemory)?;
        let mut words: Vec<u64> = Vec::new();
        words
            .try_reserve_exact(slots * layout.overlay_words)
            .map_err(|_| PoolError::OutOfMemory)?;

        for j in 0..=last {
            let st = match j {
                0 => StatusWord::ASSIGNED,
                j if j == last => StatusWord::ASSIGNED,
                1 => StatusWord::free(END),
                j if j == last - 1 => StatusWord::free(END),
                j if j == capacity + 1 => StatusWord::free(END),
                j => StatusWord::free(j + 1),
            };
            status.push(st.raw());

            let (next, prev) = if st.is_free() { (last, 0) } else { (0, 0) };
            words.push(next as u64);
            words.push(prev as u64);
            words.extend(std::iter::repeat_n(0, layout.overlay_words - 2));
        }

        Ok(Bin {
            words: words.into_boxed_slice(),
            status: status.into_boxed_slice(),
            layout,
            capacity,
            free_head: FIRST_USER_SLOT,
            live: 0,
        })
    }

    #[inline]
    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    #[inline]
    pub fn layout(&self) -> SlotLayout {
        self.layout
    }

    /// Number of assigned user slots.
    #[inline]
    pub fn len(&self) -> u32 {
        self.live
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.free_head == END
    }

    /// Head of the free-list, or [`END`].
    #[inline]
    pub fn free_head(&self) -> u32 {
        self.free_head
    }

    /// Total slot count, pseudo slots included.
    #[inline]
    pub fn slot_count(&self) -> u32 {
        self.capacity + 4
    }

    /// Index of the last user slot.
    #[inline]
    pub fn last_user_slot(&self) -> u32 {
        self.capacity + 1
    }

    /// Index of the trailing (assigned) pseudo slot.
    #[inline]
    pub fn end_slot(&self) -> u32 {
        self.capacity + 3
    }

    /// Bytes of slot storage held by this bin.
    pub fn bytes_reserved(&self) -> usize {
        self.slot_count() as usize * self.layout.footprint()
    }

    #[inline]
    pub fn is_user_slot(&self, i: u32) -> bool {
        (FIRST_USER_SLOT..=self.last_user_slot()).contains(&i)
    }

    /// Raw status word of slot `i`.
    ///
    /// # Panics
    /// If `i` is not below [`Bin::slot_count`].
    #[inline]
    pub fn status(&self, i: u32) -> StatusWord {
        StatusWord(self.status[i as usize])
    }

    #[inline]
    pub fn is_free(&self, i: u32) -> bool {
        self.status[i as usize] & FREE_FLAG != 0
    }

    /// Raw link pair stored in slot `i`. Only meaningful while the slot is
    /// free; for an assigned slot this reinterprets payload bytes.
    ///
    /// # Panics
    /// If `i` is not below [`Bin::slot_count`].
    #[inline]
    pub fn links(&self, i: u32) -> Links {
        Links {
            next: self.next_link(i),
            prev: self.prev_link(i),
        }
    }

    /// Overwrites the link pair of a free slot without any repair. Exists so
    /// validity checks can be tested against deliberately broken bins.
    #[doc(hidden)]
    pub fn overwrite_links(&mut self, i: u32, links: Links) {
        self.set_next_link(i, links.next);
        self.set_prev_link(i, links.prev);
    }

    #[inline]
    fn base(&self, i: u32) -> usize {
        i as usize * self.layout.overlay_words
    }

    #[inline]
    fn next_link(&self, i: u32) -> u32 {
        self.words[self.base(i)] as u32
    }

    #[inline]
    fn prev_link(&self, i: u32) -> u32 {
        self.words[self.base(i) + 1] as u32
    }

    #[inline]
    fn set_next_link(&mut self, i: u32, v: u32) {
        let b = self.base(i);
        self.words[b] = v as u64;
    }

    #[inline]
    fn set_prev_link(&mut self, i: u32, v: u32) {
        let b = self.base(i);
        self.words[b + 1] = v as u64;
    }

    /// Takes the top of the free-list and repairs the traversal links
    /// around it.
    #[inline]
    pub fn allocate(&mut self) -> Result<u32> {
        self.allocate_probed(&mut NoProbe)
    }

    pub fn allocate_probed<P: Probe>(&mut self, probe: &mut P) -> Result<u32> {
        let i = self.free_head;
        if i == END {
            return Err(PoolError::CapacityExhausted);
        }
        probe.read();
        self.free_head = StatusWord(self.status[i as usize]).next_free();
        // The flag must be clear before the neighbor checks below and before
        // any later operation inspects this slot.
        self.status[i as usize] = StatusWord::ASSIGNED.raw();
        probe.write();

        let faults = probe.faults();
        probe.read();
        if self.is_free(i - 1) {
            probe.read();
            let prev = self.prev_link(i);
            if !faults.is_disabled(Correction::AllocPrev) {
                self.set_next_link(prev + 1, i);
                probe.write();
            }
        }
        probe.read();
        if self.is_free(i + 1) {
            probe.read();
            let next = self.next_link(i);
            if !faults.is_disabled(Correction::AllocNext) {
                self.set_prev_link(next - 1, i);
                probe.write();
            }
        }
        self.live += 1;
        Ok(i)
    }

    /// Frees user slot `i`, pushes it on the free-list and makes its own
    /// links and the links of both adjacent free runs valid again.
    #[inline]
    pub fn deallocate(&mut self, i: u32) -> Result<()> {
        self.deallocate_probed(i, &mut NoProbe)
    }

    pub fn deallocate_probed<P: Probe>(&mut self, i: u32, probe: &mut P) -> Result<()> {
        self.check_user_slot(i)?;
        probe.read();
        if self.is_free(i) {
            return Err(PoolError::DoubleFree(i));
        }
        self.status[i as usize] = StatusWord::free(self.free_head).raw();
        probe.write();
        self.free_head = i;

        probe.read();
        let right_free = self.is_free(i + 1);
        let next = if right_free {
            probe.read();
            self.next_link(i + 1)
        } else {
            i + 1
        };
        self.set_next_link(i, next);
        probe.write();

        probe.read();
        let left_free = self.is_free(i - 1);
        let prev = if left_free {
            probe.read();
            self.prev_link(i - 1)
        } else {
            i - 1
        };
        self.set_prev_link(i, prev);
        probe.write();

        let faults = probe.faults();
        if left_free && !faults.is_disabled(Correction::FreePrev) {
            self.set_next_link(prev + 1, next);
            probe.write();
        }
        if right_free && !faults.is_disabled(Correction::FreeNext) {
            self.set_prev_link(next - 1, prev);
            probe.write();
        }
        self.live -= 1;
        Ok(())
    }

    fn check_user_slot(&self, i: u32) -> Result<()> {
        if self.is_user_slot(i) {
            Ok(())
        } else if i <= self.end_slot() {
            Err(PoolError::PseudoSlot(i))
        } else {
            Err(PoolError::OutOfRange {
                index: i,
                capacity: self.capacity,
            })
        }
    }

    fn check_assigned(&self, i: u32) -> Result<()> {
        if i > self.end_slot() {
            return Err(PoolError::OutOfRange {
                index: i,
                capacity: self.capacity,
            });
        }
        if self.is_free(i) {
            return Err(PoolError::NotAssigned(i));
        }
        Ok(())
    }

    /// Smallest assigned index above assigned slot `i`. Returns
    /// [`Bin::end_slot`] when no user slot above `i` is assigned.
    pub fn next_assigned(&self, i: u32) -> Result<u32> {
        self.check_assigned(i)?;
        if i == self.end_slot() {
            return Err(PoolError::AtEnd);
        }
        Ok(self.step_next(i))
    }

    /// Largest assigned index below assigned slot `i`. Returns `0` when no
    /// user slot below `i` is assigned.
    pub fn prev_assigned(&self, i: u32) -> Result<u32> {
        self.check_assigned(i)?;
        if i == 0 {
            return Err(PoolError::AtBegin);
        }
        Ok(self.step_prev(i))
    }

    #[inline(always)]
    pub(crate) fn step_next(&self, i: u32) -> u32 {
        let j = i + 1;
        if self.is_free(j) {
            self.next_link(j)
        } else {
            j
        }
    }

    #[inline(always)]
    pub(crate) fn step_prev(&self, i: u32) -> u32 {
        let j = i - 1;
        if self.is_free(j) {
            self.prev_link(j)
        } else {
            j
        }
    }

    /// Assigned user slots in ascending order, found by link hopping.
    pub fn iter(&self) -> SlotIter<'_> {
        SlotIter {
            bin: self,
            pos: 0,
            end: self.end_slot(),
        }
    }

    fn check_payload_slot(&self, i: u32) -> Result<()> {
        self.check_user_slot(i)?;
        if self.is_free(i) {
            return Err(PoolError::NotAssigned(i));
        }
        Ok(())
    }

    /// Payload bytes of assigned user slot `i`.
    pub fn payload(&self, i: u32) -> Result<&[u8]> {
        self.check_payload_slot(i)?;
        Ok(self.payload_unchecked(i))
    }

    pub fn payload_mut(&mut self, i: u32) -> Result<&mut [u8]> {
        self.check_payload_slot(i)?;
        Ok(self.payload_mut_unchecked(i))
    }

    /// Payload of assigned user slot `i` as 64-bit words. The last word
    /// carries trailing bytes beyond the payload size when it is not a
    /// multiple of 8.
    pub fn words(&self, i: u32) -> Result<&[u64]> {
        self.check_payload_slot(i)?;
        Ok(self.words_unchecked(i))
    }

    pub fn words_mut(&mut self, i: u32) -> Result<&mut [u64]> {
        self.check_payload_slot(i)?;
        Ok(self.words_mut_unchecked(i))
    }

    #[inline(always)]
    pub(crate) fn words_unchecked(&self, i: u32) -> &[u64] {
        let b = self.base(i);
        &self.words[b..b + self.layout.payload_words()]
    }

    #[inline(always)]
    pub(crate) fn words_mut_unchecked(&mut self, i: u32) -> &mut [u64] {
        let b = self.base(i);
        let n = self.layout.payload_words();
        &mut self.words[b..b + n]
    }

    #[inline]
    pub(crate) fn payload_unchecked(&self, i: u32) -> &[u8] {
        let n = self.layout.payload_size;
        let w = self.words_unchecked(i);
        // SAFETY: u8 has no alignment requirement and every bit pattern is a
        // valid u8; the byte length stays within the word slice.
        let bytes = unsafe { std::slice::from_raw_parts(w.as_ptr().cast::<u8>(), w.len() * WORD) };
        &bytes[..n]
    }

    #[inline]
    pub(crate) fn payload_mut_unchecked(&mut self, i: u32) -> &mut [u8] {
        let n = self.layout.payload_size;
        let w = self.words_mut_unchecked(i);
        // SAFETY: as in `payload_unchecked`; the mutable borrow of the word
        // slice is held for the lifetime of the returned bytes.
        let bytes =
            unsafe { std::slice::from_raw_parts_mut(w.as_mut_ptr().cast::<u8>(), w.len() * WORD) };
        &mut bytes[..n]
    }

    /// Calls `f` with the payload words of every assigned slot, in order.
    #[inline]
    pub fn for_each_words_mut<F: FnMut(&mut [u64])>(&mut self, mut f: F) {
        let end = self.end_slot() as usize;
        let ow = self.layout.overlay_words;
        let pw = self.layout.payload_words();
        let status = &self.status[..];
        assert_eq!(self.words.len(), status.len() * ow);
        let words = self.words.as_mut_ptr();
        let step = |j: usize| -> usize {
            // SAFETY: j <= end < status.len(), and j * ow indexes inside
            // `words` by the length check above.
            unsafe {
                if *status.get_unchecked(j) & FREE_FLAG != 0 {
                    *words.add(j * ow) as u32 as usize
                } else {
                    j
                }
            }
        };
        let mut i = step(1);
        while i != end {
            // SAFETY: i is an assigned user slot (< end), so its payload lies
            // inside `words`; the slice is dropped before the next step reads
            // any link.
            f(unsafe { std::slice::from_raw_parts_mut(words.add(i * ow), pw) });
            i = step(i + 1);
        }
    }
}

impl fmt::Debug for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bin")
            .field("capacity", &self.capacity)
            .field("live", &self.live)
            .field("free_head", &self.free_head)
            .field("layout", &self.layout)
            .finish()
    }
}

/// Iterator over the assigned user slot indices of one bin.
pub struct SlotIter<'a> {
    bin: &'a Bin,
    pos: u32,
    end: u32,
}

impl Iterator for SlotIter<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        if self.pos == self.end {
            return None;
        }
        self.pos = self.bin.step_next(self.pos);
        (self.pos != self.end).then_some(self.pos)
    }
}
