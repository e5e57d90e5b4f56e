//! Full-scan structural checks for a single bin.
//!
//! The scanner derives the nearest assigned slot below and above every
//! position from the status words alone and compares only the links that
//! must be correct: those of free slots touching an assigned slot. Links of
//! interior free slots are stale by design and ignored.

use std::fmt;

use crate::bin::{Bin, END, FIRST_USER_SLOT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    /// A free slot directly before an assigned slot must link back to the
    /// nearest assigned slot below it.
    PrevBeforeAssigned,
    /// A free slot directly after an assigned slot must link forward to the
    /// nearest assigned slot above it.
    NextAfterAssigned,
    /// The slot on top of the free-list must have both links valid.
    FreeTop,
    /// Free-list reaches exactly the free user slots, once each.
    FreeList,
    /// Pseudo slots keep their fixed status.
    Pseudo,
    /// Stored live count matches the assigned user slots.
    LiveCount,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub slot: u32,
    pub condition: Condition,
    pub expected: u64,
    pub found: u64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "slot {}: {:?} expected {} found {}",
            self.slot, self.condition, self.expected, self.found
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, slot: u32, condition: Condition) -> bool {
        self.violations
            .iter()
            .any(|v| v.slot == slot && v.condition == condition)
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Nearest assigned index at or below / at or above each slot, from status
/// words only.
fn nearest_assigned(bin: &Bin) -> (Vec<u32>, Vec<u32>) {
    let n = bin.slot_count() as usize;
    let mut below = vec![0u32; n];
    let mut above = vec![0u32; n];
    let mut last = 0;
    for i in 0..n {
        if !bin.is_free(i as u32) {
            last = i as u32;
        }
        below[i] = last;
    }
    let mut last = bin.end_slot();
    for i in (0..n).rev() {
        if !bin.is_free(i as u32) {
            last = i as u32;
        }
        above[i] = last;
    }
    (below, above)
}

/// Checks both traversal conditions, pseudo slots, the free-list and the
/// live count. O(capacity).
pub fn scan_validity(bin: &Bin) -> ValidityReport {
    let mut out = Vec::new();
    let end = bin.end_slot();

    for (slot, want_free) in [(0, false), (1, true), (end - 1, true), (end, false)] {
        let st = bin.status(slot);
        let bad = st.is_free() != want_free || (want_free && st.next_free() != END);
        if bad {
            out.push(Violation {
                slot,
                condition: Condition::Pseudo,
                expected: if want_free { (1 << 31 | END) as u64 } else { 0 },
                found: st.raw() as u64,
            });
        }
    }
    if !out.is_empty() {
        // Nearest-assigned computation relies on the pseudo slots.
        return ValidityReport { violations: out };
    }

    let (below, above) = nearest_assigned(bin);
    for i in 1..end {
        if !bin.is_free(i) {
            continue;
        }
        let links = bin.links(i);
        if !bin.is_free(i + 1) && links.prev != below[i as usize] {
            out.push(Violation {
                slot: i,
                condition: Condition::PrevBeforeAssigned,
                expected: below[i as usize] as u64,
                found: links.prev as u64,
            });
        }
        if !bin.is_free(i - 1) && links.next != above[i as usize] {
            out.push(Violation {
                slot: i,
                condition: Condition::NextAfterAssigned,
                expected: above[i as usize] as u64,
                found: links.next as u64,
            });
        }
    }

    let free_users = (FIRST_USER_SLOT..=bin.last_user_slot())
        .filter(|&i| bin.is_free(i))
        .count();
    let mut seen = vec![false; bin.slot_count() as usize];
    let mut cur = bin.free_head();
    let mut steps = 0usize;
    while cur != END {
        if !bin.is_user_slot(cur) || !bin.is_free(cur) || seen[cur as usize] {
            out.push(Violation {
                slot: cur,
                condition: Condition::FreeList,
                expected: END as u64,
                found: cur as u64,
            });
            break;
        }
        seen[cur as usize] = true;
        steps += 1;
        cur = bin.status(cur).next_free();
    }
    if steps != free_users && out.iter().all(|v| v.condition != Condition::FreeList) {
        out.push(Violation {
            slot: bin.free_head(),
            condition: Condition::FreeList,
            expected: free_users as u64,
            found: steps as u64,
        });
    }

    let assigned = bin.capacity() as usize - free_users;
    if assigned != bin.len() as usize {
        out.push(Violation {
            slot: 0,
            condition: Condition::LiveCount,
            expected: assigned as u64,
            found: bin.len() as u64,
        });
    }

    ValidityReport { violations: out }
}

/// How much of the free-list top to check before an allocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FreeTopCheck {
    /// Both links of the top slot must point at the nearest assigned slots.
    /// Fresh slots keep their initial `prev = 0` after the slot below them
    /// is handed out, so this fails as soon as a bin has allocated once and
    /// still has never-used slots.
    #[default]
    Full,
    /// Only the links the next allocation reads: `prev` when the slot below
    /// is free, `next` when the slot above is free.
    Guarded,
}

/// The slot on top of the free-list must carry valid links in both
/// directions.
pub fn check_free_top(bin: &Bin) -> ValidityReport {
    check_free_top_with(bin, FreeTopCheck::Full)
}

pub fn check_free_top_with(bin: &Bin, mode: FreeTopCheck) -> ValidityReport {
    let top = bin.free_head();
    if top == END {
        return ValidityReport::default();
    }
    let mut out = Vec::new();
    let links = bin.links(top);
    let below = (0..top).rev().find(|&j| !bin.is_free(j)).unwrap_or(0);
    let above = (top + 1..=bin.end_slot())
        .find(|&j| !bin.is_free(j))
        .unwrap_or(bin.end_slot());
    let full = mode == FreeTopCheck::Full;
    if (full || bin.is_free(top - 1)) && links.prev != below {
        out.push(Violation {
            slot: top,
            condition: Condition::FreeTop,
            expected: below as u64,
            found: links.prev as u64,
        });
    }
    if (full || bin.is_free(top + 1)) && links.next != above {
        out.push(Violation {
            slot: top,
            condition: Condition::FreeTop,
            expected: above as u64,
            found: links.next as u64,
        });
    }
    ValidityReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bin::Links;

    #[test]
    fn fresh_bin_is_valid() {
        for cap in [1, 2, 4, 64] {
            let bin = Bin::new(cap, 24).unwrap();
            assert!(scan_validity(&bin).is_valid());
            assert!(check_free_top(&bin).is_valid());
        }
    }

    #[test]
    fn corrupted_link_is_reported() {
        let mut bin = Bin::new(4, 24).unwrap();
        bin.allocate().unwrap();
        bin.overwrite_links(1, Links { next: 5, prev: 0 });
        let report = scan_validity(&bin);
        assert!(report.has(1, Condition::NextAfterAssigned), "{report}");
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn stale_interior_links_are_ignored() {
        let mut bin = Bin::new(8, 24).unwrap();
        bin.allocate().unwrap();
        // Slots 3..=9 free; 4..=8 are interior.
        bin.overwrite_links(5, Links { next: 1234, prev: 999 });
        assert!(scan_validity(&bin).is_valid());
    }

    #[test]
    fn fresh_top_has_stale_prev() {
        let mut bin = Bin::new(4, 24).unwrap();
        bin.allocate().unwrap();
        assert!(scan_validity(&bin).is_valid());
        let full = check_free_top(&bin);
        assert!(full.has(3, Condition::FreeTop), "{full}");
        assert_eq!(full.violations[0].expected, 2);
        assert_eq!(full.violations[0].found, 0);
        assert!(check_free_top_with(&bin, FreeTopCheck::Guarded).is_valid());
    }

    #[test]
    fn random_ops_stay_valid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut bin = Bin::new(64, 24).unwrap();
        let mut live: Vec<u32> = Vec::new();
        for _ in 0..10_000 {
            if !bin.is_full() && (live.is_empty() || rng.random_bool(0.55)) {
                let r = check_free_top_with(&bin, FreeTopCheck::Guarded);
                assert!(r.is_valid(), "{r}");
                live.push(bin.allocate().unwrap());
            } else {
                let k = rng.random_range(0..live.len());
                bin.deallocate(live.swap_remove(k)).unwrap();
            }
            let r = scan_validity(&bin);
            assert!(r.is_valid(), "{r}");
        }
    }
}
