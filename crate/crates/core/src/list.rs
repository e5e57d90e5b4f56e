//! Doubly linked list of bins stored in a slab, addressed by generational
//! ids so handles into a retired bin are detected instead of aliasing a
//! newer bin that reused the storage entry.

use std::fmt;

/// Stable identity of a bin within one pool.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinId {
    index: u32,
    generation: u32,
}

impl BinId {
    /// Placeholder used by cursors of a pool without bins.
    pub const NONE: BinId = BinId {
        index: u32::MAX,
        generation: u32::MAX,
    };

    pub(crate) fn to_bits(self) -> u64 {
        (self.generation as u64) << 32 | self.index as u64
    }

    pub(crate) fn from_bits(bits: u64) -> Self {
        BinId {
            index: bits as u32,
            generation: (bits >> 32) as u32,
        }
    }
}

impl fmt::Debug for BinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == BinId::NONE {
            f.write_str("BinId(none)")
        } else {
            write!(f, "BinId({}v{})", self.index, self.generation)
        }
    }
}

struct Node<B> {
    value: B,
    prev: Option<u32>,
    next: Option<u32>,
}

struct Entry<B> {
    generation: u32,
    node: Option<Node<B>>,
}

pub(crate) struct BinList<B> {
    entries: Vec<Entry<B>>,
    vacant: Vec<u32>,
    head: Option<u32>,
    tail: Option<u32>,
    len: usize,
}

impl<B> Default for BinList<B> {
    fn default() -> Self {
        BinList {
            entries: Vec::new(),
            vacant: Vec::new(),
            head: None,
            tail: None,
            len: 0,
        }
    }
}

impl<B: Clone> Clone for BinList<B> {
    fn clone(&self) -> Self {
        self.clone_with(B::clone)
    }
}

impl<B> BinList<B> {
    pub fn len(&self) -> usize {
        self.len
    }

    fn id_of(&self, index: u32) -> BinId {
        BinId {
            index,
            generation: self.entries[index as usize].generation,
        }
    }

    fn node(&self, id: BinId) -> Option<&Node<B>> {
        let e = self.entries.get(id.index as usize)?;
        if e.generation != id.generation {
            return None;
        }
        e.node.as_ref()
    }

    pub fn contains(&self, id: BinId) -> bool {
        self.node(id).is_some()
    }

    pub fn get(&self, id: BinId) -> Option<&B> {
        self.node(id).map(|n| &n.value)
    }

    pub fn get_mut(&mut self, id: BinId) -> Option<&mut B> {
        let e = self.entries.get_mut(id.index as usize)?;
        if e.generation != id.generation {
            return None;
        }
        e.node.as_mut().map(|n| &mut n.value)
    }

    pub fn head(&self) -> Option<BinId> {
        self.head.map(|i| self.id_of(i))
    }

    pub fn tail(&self) -> Option<BinId> {
        self.tail.map(|i| self.id_of(i))
    }

    pub fn next(&self, id: BinId) -> Option<BinId> {
        self.node(id)?.next.map(|i| self.id_of(i))
    }

    pub fn prev(&self, id: BinId) -> Option<BinId> {
        self.node(id)?.prev.map(|i| self.id_of(i))
    }

    pub fn push_back(&mut self, value: B) -> BinId {
        let node = Node {
            value,
            prev: self.tail,
            next: None,
        };
        let index = match self.vacant.pop() {
            Some(i) => {
                self.entries[i as usize].node = Some(node);
                i
            }
            None => {
                self.entries.push(Entry {
                    generation: 0,
                    node: Some(node),
                });
                (self.entries.len() - 1) as u32
            }
        };
        match self.tail {
            Some(t) => self.entries[t as usize].node.as_mut().unwrap().next = Some(index),
            None => self.head = Some(index),
        }
        self.tail = Some(index);
        self.len += 1;
        self.id_of(index)
    }

    pub fn remove(&mut self, id: BinId) -> Option<B> {
        self.node(id)?;
        let entry = &mut self.entries[id.index as usize];
        let node = entry.node.take().unwrap();
        entry.generation = entry.generation.wrapping_add(1);
        match node.prev {
            Some(p) => self.entries[p as usize].node.as_mut().unwrap().next = node.next,
            None => self.head = node.next,
        }
        match node.next {
            Some(n) => self.entries[n as usize].node.as_mut().unwrap().prev = node.prev,
            None => self.tail = node.prev,
        }
        self.vacant.push(id.index);
        self.len -= 1;
        Some(node.value)
    }

    /// Ids in list order.
    pub fn ids(&self) -> Ids<'_, B> {
        Ids {
            list: self,
            cur: self.head,
        }
    }

    /// Zero-based list position of `id`. Linear in the bin count.
    pub fn position(&self, id: BinId) -> Option<usize> {
        self.ids().position(|x| x == id)
    }

    /// Mutable references to every bin, in list order.
    pub fn values_mut_ordered(&mut self) -> Vec<&mut B> {
        let mut order = Vec::with_capacity(self.len);
        let mut cur = self.head;
        while let Some(i) = cur {
            order.push(i);
            cur = self.entries_next(i);
        }
        let mut by_index: Vec<Option<&mut B>> = self
            .entries
            .iter_mut()
            .map(|e| e.node.as_mut().map(|n| &mut n.value))
            .collect();
        order
            .into_iter()
            .map(|i| by_index[i as usize].take().unwrap())
            .collect()
    }

    fn entries_next(&self, i: u32) -> Option<u32> {
        self.entries[i as usize].node.as_ref().unwrap().next
    }

    /// Removes every bin for which `dead` holds, returning the removed ids.
    pub fn remove_where<F: FnMut(&mut B) -> bool>(&mut self, mut dead: F) -> Vec<BinId> {
        let ids: Vec<BinId> = self.ids().collect();
        let doomed: Vec<BinId> = ids
            .into_iter()
            .filter(|&id| dead(self.get_mut(id).unwrap()))
            .collect();
        for &id in &doomed {
            self.remove(id);
        }
        doomed
    }

    /// Copies every bin through `f`, keeping ids and order.
    pub fn clone_with<C, F: FnMut(&B) -> C>(&self, mut f: F) -> BinList<C> {
        BinList {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    generation: e.generation,
                    node: e.node.as_ref().map(|n| Node {
                        value: f(&n.value),
                        prev: n.prev,
                        next: n.next,
                    }),
                })
                .collect(),
            vacant: self.vacant.clone(),
            head: self.head,
            tail: self.tail,
            len: self.len,
        }
    }

    /// Converts every bin, keeping ids and order.
    pub fn map<C, F: FnMut(B) -> C>(self, mut f: F) -> BinList<C> {
        BinList {
            entries: self
                .entries
                .into_iter()
                .map(|e| Entry {
                    generation: e.generation,
                    node: e.node.map(|n| Node {
                        value: f(n.value),
                        prev: n.prev,
                        next: n.next,
                    }),
                })
                .collect(),
            vacant: self.vacant,
            head: self.head,
            tail: self.tail,
            len: self.len,
        }
    }
}

pub(crate) struct Ids<'a, B> {
    list: &'a BinList<B>,
    cur: Option<u32>,
}

impl<B> Iterator for Ids<'_, B> {
    type Item = BinId;

    fn next(&mut self) -> Option<BinId> {
        let i = self.cur?;
        self.cur = self.list.entries_next(i);
        Some(self.list.id_of(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_remove_reuse() {
        let mut l = BinList::default();
        let a = l.push_back('a');
        let b = l.push_back('b');
        let c = l.push_back('c');
        assert_eq!(l.ids().collect::<Vec<_>>(), vec![a, b, c]);
        assert_eq!(l.remove(b), Some('b'));
        assert_eq!(l.ids().collect::<Vec<_>>(), vec![a, c]);
        assert_eq!(l.next(a), Some(c));
        assert_eq!(l.prev(c), Some(a));
        assert!(l.get(b).is_none());

        let d = l.push_back('d');
        assert_ne!(d, b, "reused entry must carry a new generation");
        assert!(l.get(b).is_none());
        assert_eq!(l.position(d), Some(2));
        assert_eq!(l.remove(b), None);

        let vals: Vec<char> = l.values_mut_ordered().into_iter().map(|v| *v).collect();
        assert_eq!(vals, vec!['a', 'c', 'd']);
    }

    #[test]
    fn remove_ends() {
        let mut l = BinList::default();
        let a = l.push_back(1);
        let b = l.push_back(2);
        l.remove(a);
        assert_eq!(l.head(), Some(b));
        l.remove(b);
        assert_eq!(l.head(), None);
        assert_eq!(l.tail(), None);
        assert_eq!(l.len(), 0);
    }

    #[test]
    fn bits_round_trip() {
        let mut l = BinList::default();
        l.push_back(());
        let id = l.push_back(());
        assert_eq!(BinId::from_bits(id.to_bits()), id);
        assert_eq!(BinId::from_bits(BinId::NONE.to_bits()), BinId::NONE);
    }
}
