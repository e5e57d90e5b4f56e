use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of pre-drawn values the kernel applies to every element.
pub const RANDOM_VALUES: usize = 20;

/// Three 64-bit counters, 24 bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[repr(C)]
pub struct Element24 {
    pub x: u64,
    pub y: u64,
    pub z: u64,
}

impl Element24 {
    /// Deterministic contents for the `n`-th element of a run.
    pub fn nth(n: u64) -> Self {
        Element24 {
            x: n,
            y: n.wrapping_mul(3),
            z: n ^ 0x5555,
        }
    }

    pub fn to_bytes(self) -> [u8; 24] {
        let mut out = [0u8; 24];
        out[..8].copy_from_slice(&self.x.to_ne_bytes());
        out[8..16].copy_from_slice(&self.y.to_ne_bytes());
        out[16..].copy_from_slice(&self.z.to_ne_bytes());
        out
    }

    pub fn words_mut(&mut self) -> [&mut u64; 3] {
        [&mut self.x, &mut self.y, &mut self.z]
    }
}

/// Draws the kernel's values: 31-bit integers from `seed`.
pub fn draw_values(seed: u64) -> [u64; RANDOM_VALUES] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| u64::from(rng.random::<u32>() >> 1))
}

/// For each value `v`: `x += v`, `y += 2v`, `z += 4v`. `words` is an
/// element's payload as `[x, y, z]`.
// Kept out of line so every traversal pays the same per-element call and
// the compiler cannot fold the loop over `values` into a single add.
#[inline(never)]
pub fn workload_kernel(words: &mut [u64], values: &[u64; RANDOM_VALUES]) {
    let [x, y, z] = words else {
        panic!("kernel expects a 24-byte element");
    };
    for &v in values {
        *x = x.wrapping_add(v);
        *y = y.wrapping_add(v.wrapping_mul(2));
        *z = z.wrapping_add(v.wrapping_mul(4));
    }
}

/// Order-independent checksum contribution of one element.
#[inline(always)]
pub fn fold(words: &[u64]) -> u64 {
    words[0] ^ words[1].rotate_left(21) ^ words[2].rotate_left(42)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_leave_element_unchanged() {
        let mut w = [7, 8, 9];
        workload_kernel(&mut w, &[0; RANDOM_VALUES]);
        assert_eq!(w, [7, 8, 9]);
    }

    #[test]
    fn ones_add_20_40_80() {
        let mut w = [0, 0, 0];
        workload_kernel(&mut w, &[1; RANDOM_VALUES]);
        assert_eq!(w, [20, 40, 80]);
    }

    #[test]
    fn values_are_31_bit_and_seeded() {
        let a = draw_values(4);
        assert_eq!(a, draw_values(4));
        assert_ne!(a, draw_values(5));
        assert!(a.iter().all(|&v| v < 1 << 31));
    }

    #[test]
    fn bytes_layout() {
        let e = Element24 { x: 1, y: 2, z: 3 };
        let b = e.to_bytes();
        assert_eq!(u64::from_ne_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(std::mem::size_of::<Element24>(), 24);
    }
}
