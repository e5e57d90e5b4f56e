//! Reference model of a pool, driven only by the operation sequence.
//!
//! Each model bin predicts allocations as "pop the most recently freed
//! index, otherwise hand out the next never-used index starting at 2". Bin
//! choice mirrors the pool policy: start at the most recently used bin,
//! take the first non-full one going forward with wrap-around, otherwise
//! append. The model never looks at a real pool.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bin::FIRST_USER_SLOT;
use crate::oracle::trace::Op;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("no live element at age index {0}")]
    NoSuchAge(usize),
    #[error("no live element at (bin {0}, slot {1})")]
    NoSuchPair(usize, u32),
}

/// Position of a live element: 1-based bin ordinal plus slot index.
pub type Pair = (usize, u32);

#[derive(Clone, Debug)]
struct ModelBin {
    // Serial numbers increase with every appended bin, so serial order is
    // list order.
    serial: u64,
    freed: Vec<u32>,
    next_fresh: u32,
    live: u32,
}

#[derive(Clone, Debug)]
pub struct LiveElement {
    pub serial: u64,
    pub slot: u32,
    pub tag: u64,
}

/// What the model expects an operation to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Allocated(Pair),
    Freed(Pair),
    Retired(usize),
}

#[derive(Clone, Debug)]
pub struct ReferenceModel {
    capacity: u32,
    bins: Vec<ModelBin>,
    mru: Option<u64>,
    next_serial: u64,
    next_tag: u64,
    // Live elements, oldest first.
    live: Vec<LiveElement>,
    order: BTreeMap<(u64, u32), u64>,
}

impl ReferenceModel {
    pub fn new(capacity: u32) -> Self {
        ReferenceModel {
            capacity,
            bins: Vec::new(),
            mru: None,
            next_serial: 0,
            next_tag: 1,
            live: Vec::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    /// Live elements in allocation order.
    pub fn live(&self) -> &[LiveElement] {
        &self.live
    }

    fn is_full(&self, b: &ModelBin) -> bool {
        b.freed.is_empty() && b.next_fresh > self.capacity + 1
    }

    fn ordinal_of(&self, serial: u64) -> usize {
        self.bins
            .binary_search_by_key(&serial, |b| b.serial)
            .expect("serial of a live bin")
            + 1
    }

    /// Ordinal of the bin the next allocation will use, or `None` when it
    /// will append a new bin.
    pub fn next_alloc_bin(&self) -> Option<usize> {
        let n = self.bins.len();
        let start = self
            .mru
            .and_then(|s| self.bins.iter().position(|b| b.serial == s))
            .unwrap_or(0);
        (0..n)
            .map(|k| (start + k) % n)
            .find(|&i| !self.is_full(&self.bins[i]))
            .map(|i| i + 1)
    }

    /// Applies one operation and returns the expected outcome.
    pub fn step(&mut self, op: Op) -> Result<Outcome, ModelError> {
        match op {
            Op::Alloc => Ok(Outcome::Allocated(self.alloc().0)),
            Op::Free(k) => self.free_age(k).map(Outcome::Freed),
            Op::Retire => Ok(Outcome::Retired(self.retire())),
        }
    }

    /// Allocates and returns the predicted position plus a fresh payload tag.
    pub fn alloc(&mut self) -> (Pair, u64) {
        let idx = match self.next_alloc_bin() {
            Some(ord) => ord - 1,
            None => {
                self.bins.push(ModelBin {
                    serial: self.next_serial,
                    freed: Vec::new(),
                    next_fresh: FIRST_USER_SLOT,
                    live: 0,
                });
                self.next_serial += 1;
                self.bins.len() - 1
            }
        };
        let b = &mut self.bins[idx];
        let slot = match b.freed.pop() {
            Some(s) => s,
            None => {
                b.next_fresh += 1;
                b.next_fresh - 1
            }
        };
        b.live += 1;
        let serial = b.serial;
        self.mru = Some(serial);
        let tag = self.next_tag;
        self.next_tag += 1;
        self.live.push(LiveElement { serial, slot, tag });
        self.order.insert((serial, slot), tag);
        ((idx + 1, slot), tag)
    }

    /// Frees the `k`-th oldest live element.
    pub fn free_age(&mut self, k: usize) -> Result<Pair, ModelError> {
        if k >= self.live.len() {
            return Err(ModelError::NoSuchAge(k));
        }
        let e = self.live.remove(k);
        Ok(self.release(e.serial, e.slot))
    }

    /// Frees the live element at `pair`.
    pub fn free_pair(&mut self, pair: Pair) -> Result<(), ModelError> {
        let (ord, slot) = pair;
        let serial = ord
            .checked_sub(1)
            .and_then(|i| self.bins.get(i))
            .map(|b| b.serial)
            .ok_or(ModelError::NoSuchPair(ord, slot))?;
        let k = self
            .live
            .iter()
            .position(|e| e.serial == serial && e.slot == slot)
            .ok_or(ModelError::NoSuchPair(ord, slot))?;
        self.free_age(k).map(|_| ())
    }

    fn release(&mut self, serial: u64, slot: u32) -> Pair {
        let ord = self.ordinal_of(serial);
        let b = &mut self.bins[ord - 1];
        b.freed.push(slot);
        b.live -= 1;
        self.order.remove(&(serial, slot));
        (ord, slot)
    }

    /// Drops every bin without live elements.
    pub fn retire(&mut self) -> usize {
        let before = self.bins.len();
        self.bins.retain(|b| b.live > 0);
        if let Some(m) = self.mru {
            if !self.bins.iter().any(|b| b.serial == m) {
                self.mru = None;
            }
        }
        before - self.bins.len()
    }

    /// Live positions and tags in iteration order: by bin ordinal, then
    /// slot.
    pub fn iteration_order(&self) -> impl Iterator<Item = (Pair, u64)> + '_ {
        let mut cached = (u64::MAX, 0);
        self.order.iter().map(move |(&(serial, slot), &tag)| {
            if cached.0 != serial {
                cached = (serial, self.ordinal_of(serial));
            }
            ((cached.1, slot), tag)
        })
    }

    /// Tag of the element at `pair`, if live.
    pub fn tag_at(&self, pair: Pair) -> Option<u64> {
        let serial = self.bins.get(pair.0.checked_sub(1)?)?.serial;
        self.order.get(&(serial, pair.1)).copied()
    }

    /// Live count per bin, in order.
    pub fn bin_live_counts(&self) -> Vec<u32> {
        self.bins.iter().map(|b| b.live).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_alloc_prediction() {
        let mut m = ReferenceModel::new(4);
        assert_eq!(m.step(Op::Alloc).unwrap(), Outcome::Allocated((1, 2)));
    }

    #[test]
    fn lifo_prediction() {
        let mut m = ReferenceModel::new(4);
        m.step(Op::Alloc).unwrap();
        let second = m.step(Op::Alloc).unwrap();
        m.step(Op::Free(1)).unwrap();
        assert_eq!(m.step(Op::Alloc).unwrap(), second);
    }

    #[test]
    fn unknown_free_is_error() {
        let mut m = ReferenceModel::new(4);
        assert_eq!(m.step(Op::Free(0)), Err(ModelError::NoSuchAge(0)));
        m.alloc();
        assert_eq!(m.free_pair((1, 3)), Err(ModelError::NoSuchPair(1, 3)));
        assert_eq!(m.free_pair((2, 2)), Err(ModelError::NoSuchPair(2, 2)));
        m.free_pair((1, 2)).unwrap();
        assert_eq!(m.live_count(), 0);
    }

    #[test]
    fn grows_and_retires() {
        let mut m = ReferenceModel::new(2);
        for _ in 0..5 {
            m.alloc();
        }
        assert_eq!(m.bin_count(), 3);
        m.free_age(2).unwrap();
        m.free_age(2).unwrap();
        assert_eq!(m.bin_live_counts(), vec![2, 0, 1]);
        assert_eq!(m.retire(), 1);
        assert_eq!(
            m.iteration_order().map(|(p, _)| p).collect::<Vec<_>>(),
            vec![(1, 2), (1, 3), (2, 2)]
        );
    }
}
