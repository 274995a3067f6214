//! Permutation coding for ordering channels: bit blocks map to group
//! orderings through Lehmer (factorial number system) ranks.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PermError {
    #[error("group size {0} is not supported (need 2..=20)")]
    BadGroupSize(u8),
    #[error("rank {rank} out of range for the configured code (max {max})")]
    RankOutOfRange { rank: u64, max: u64 },
    #[error("permutation is not a rearrangement of 0..n")]
    MalformedPermutation,
}

/// n! for n ≤ 20.
pub fn factorial(n: u8) -> u64 {
    (1..=u64::from(n)).product()
}

/// Bijection between fixed-width bit blocks and a subset of the n!
/// orderings of a group. A block of `bits_per_group` = ⌊log₂ n!⌋ bits is
/// interpreted as a Lehmer rank; the fractional remainder of the capacity
/// is discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationCode {
    n: u8,
    bits_per_group: u32,
}

impl PermutationCode {
    pub fn new(n: u8) -> Result<Self, PermError> {
        if !(2..=20).contains(&n) {
            return Err(PermError::BadGroupSize(n));
        }
        let bits_per_group = 63 - factorial(n).leading_zeros();
        Ok(PermutationCode { n, bits_per_group })
    }

    pub fn group_size(&self) -> u8 {
        self.n
    }

    /// ⌊log₂ n!⌋: how many payload bits one group carries.
    pub fn bits_per_group(&self) -> u32 {
        self.bits_per_group
    }

    /// Number of bits needed to render any rank in 0..n! losslessly.
    pub fn rank_bits(&self) -> u32 {
        64 - (factorial(self.n) - 1).leading_zeros()
    }

    /// Maps a bit block (as an integer < 2^bits_per_group) to the
    /// permutation with that Lehmer rank.
    pub fn encode(&self, block: u64) -> Result<Vec<u8>, PermError> {
        let max = 1u64 << self.bits_per_group;
        if block >= max {
            return Err(PermError::RankOutOfRange { rank: block, max: max - 1 });
        }
        Ok(permutation_of_rank(block, self.n))
    }

    /// Recovers the bit block from a received ordering.
    pub fn decode(&self, perm: &[u8]) -> Result<u64, PermError> {
        rank_of_permutation(perm, self.n)
    }
}

/// The permutation of {0,…,n−1} with the given Lehmer rank (rank < n!).
pub fn permutation_of_rank(rank: u64, n: u8) -> Vec<u8> {
    debug_assert!(rank < factorial(n));
    let n = usize::from(n);
    // factorial-base digits, least significant first
    let mut digits = Vec::with_capacity(n);
    let mut r = rank;
    for base in 1..=n as u64 {
        digits.push((r % base) as usize);
        r /= base;
    }
    let mut pool: Vec<u8> = (0..n as u8).collect();
    digits.iter().rev().map(|&d| pool.remove(d)).collect()
}

/// Lehmer rank of a permutation of {0,…,n−1}.
pub fn rank_of_permutation(perm: &[u8], n: u8) -> Result<u64, PermError> {
    if perm.len() != usize::from(n) {
        return Err(PermError::MalformedPermutation);
    }
    let mut pool: Vec<u8> = (0..n).collect();
    let mut rank = 0u64;
    for (i, &p) in perm.iter().enumerate() {
        let d = pool.iter().position(|&x| x == p).ok_or(PermError::MalformedPermutation)? as u64;
        rank += d * factorial(n - 1 - i as u8);
        pool.remove(d as usize);
    }
    Ok(rank)
}

/// Channel capacity of m groups of n PDUs: the theoretical m·log₂ n! and
/// the m·⌊log₂ n!⌋ bits the block code realizes.
pub fn capacity(n: u8, m: u64) -> (f64, u64) {
    let theoretical = m as f64 * (factorial(n) as f64).log2();
    let realized = m * u64::from(63 - factorial(n).leading_zeros());
    (theoretical, realized)
}
