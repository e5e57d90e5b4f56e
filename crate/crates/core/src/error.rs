use thiserror::Error;

/// Errors reported by bins, pools and the shared pool.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("bin capacity {0} outside 1..={max}", max = crate::bin::MAX_CAPACITY)]
    Size(u64),

    #[error("invalid argument: {0}")]
    Argument(&'static str),

    /// The bin has no free slot left. Pools react by moving to another bin.
    #[error("bin is full")]
    CapacityExhausted,

    #[error("could not reserve storage for a new bin")]
    OutOfMemory,

    #[error("slot {0} is already free")]
    DoubleFree(u32),

    #[error("slot {0} is a pseudo slot")]
    PseudoSlot(u32),

    #[error("slot {index} out of range for capacity {capacity}")]
    OutOfRange { index: u32, capacity: u32 },

    #[error("slot {0} is not assigned")]
    NotAssigned(u32),

    #[error("handle refers to a bin that no longer exists")]
    StaleHandle,

    #[error("cursor is at the end")]
    AtEnd,

    #[error("cursor is at the beginning")]
    AtBegin,

    #[error("payload length {found} does not match payload size {expected}")]
    PayloadSize { expected: usize, found: usize },
}

pub type Result<T, E = PoolError> = std::result::Result<T, E>;
