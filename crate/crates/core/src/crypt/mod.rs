//! Shuffling-based learnable encryption.
//!
//! An image is cut into `patch_size × patch_size × C` grids. Encryption
//! relocates whole grids with a keyed permutation and then permutes the
//! flattened (row, column, channel) positions inside each destination grid
//! with a second, per-grid keyed permutation. Keys are a 64-bit seed plus the
//! patch size; all permutations are re-derived from them on demand.

mod cipher;
mod key;

pub use cipher::{
    decrypt, derive_permutations, encrypt, encrypt_with, CipherMode, EncryptedSpectrogram,
    GridGeometry, Permutations,
};
pub use key::{KeyId, KeyStream, ShuffleKey, SKEY_VERSION};

pub use crate::rng::SplitMix64;

/// Fisher–Yates shuffle of `0..len` driven by `stream`.
///
/// Walks `i` from `len - 1` down to `1`, swapping position `i` with
/// `j = next % (i + 1)`. Modulo bias is accepted; portability is the point.
pub fn fisher_yates(len: usize, stream: &mut SplitMix64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (stream.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// True if `perm` is a bijection on `0..perm.len()`.
pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_yates_consumes_len_minus_one_draws() {
        let mut a = SplitMix64::new(3);
        let _ = fisher_yates(5, &mut a);
        let mut b = SplitMix64::new(3);
        for _ in 0..4 {
            b.next_u64();
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn fisher_yates_by_hand() {
        // Reference draws from seed 0, reduced by hand.
        let draws = [0xE220_A839_7B1D_CDAFu64, 0x6E78_9E6A_A1B9_65F4, 0x06C4_5D18_8009_454F];
        let mut want = vec![0usize, 1, 2, 3];
        for (step, i) in (1..4).rev().enumerate() {
            let j = (draws[step] % (i as u64 + 1)) as usize;
            want.swap(i, j);
        }
        assert_eq!(fisher_yates(4, &mut SplitMix64::new(0)), want);
    }

    #[test]
    fn trivial_lengths() {
        assert!(fisher_yates(0, &mut SplitMix64::new(1)).is_empty());
        assert_eq!(fisher_yates(1, &mut SplitMix64::new(1)), vec![0]);
        assert!(!is_permutation(&[0, 0]));
        assert!(!is_permutation(&[2, 0]));
    }
}
