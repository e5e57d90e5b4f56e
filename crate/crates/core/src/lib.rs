//! Fixed-size small-object pool with cheap in-order traversal.
//!
//! Objects live in bins of fixed capacity. Every slot carries a status word
//! and, while free, a pair of links that let an iterator jump over runs of
//! free slots in one step. Allocation and deallocation touch a bounded
//! number of slot fields and never scan.
//!
//! [`Pool`] is single-threaded. [`SharedPool`] adds a per-bin lock and a
//! per-thread preferred bin.

mod bin;
mod error;
mod list;
mod pool;
mod sync;

pub mod oracle;

pub use bin::{
    Bin, Correction, Faults, Links, NoProbe, OpCounter, Probe, SlotIter, SlotLayout, StatusWord,
    DEFAULT_BIN_CAPACITY, END, FIRST_USER_SLOT, FREE_FLAG, LINK_WIDTH, MAX_CAPACITY, STATUS_WIDTH,
};
pub use error::{PoolError, Result};
pub use list::BinId;
pub use pool::{BinRun, Cursor, CursorRange, Handle, Iter, Pool, BIN_METADATA_BYTES};
pub use sync::SharedPool;
