//! PE optional-header checksum.
//!
//! The checksum is a 16-bit one's-complement sum over the file viewed as
//! little-endian words, with the four CheckSum field bytes treated as zero,
//! plus the file length.  The word sum folds through an operation that is
//! associative with identity zero, so the file can be split at even offsets,
//! summed per chunk, and the partial sums combined in any grouping — the
//! parallel path below relies on exactly that and always produces the same
//! value as the sequential one.

/// Chunk size for the parallel path; must be even so words never straddle a
/// chunk boundary.
#[cfg(feature = "parallel")]
const PAR_CHUNK: usize = 256 * 1024;

/// Byte length below which parallel dispatch is not worth the overhead.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1024 * 1024;

/// One fold step: add high half into low half.  For inputs that are sums of
/// two folded values this lands back in `0..=0xFFFF`.
#[inline]
fn fold(value: u32) -> u32 {
    (value & 0xFFFF) + (value >> 16)
}

/// Combine two folded partial sums.  Congruent to addition mod 0xFFFF with
/// the representative picked so that zero only comes from all-zero input;
/// associative and commutative with identity 0.
#[inline]
fn combine(a: u32, b: u32) -> u32 {
    fold(a + b)
}

/// Sum the words of `data` where `data` starts at absolute file offset
/// `base`, zeroing any byte inside `skip..skip + 4`.
fn sum_words(data: &[u8], base: u64, skip: u64) -> u32 {
    let masked = |i: usize, b: u8| -> u32 {
        let pos = base + i as u64;
        if (skip..skip + 4).contains(&pos) {
            0
        } else {
            u32::from(b)
        }
    };
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    let mut i = 0;
    for pair in &mut chunks {
        let word = masked(i, pair[0]) | (masked(i + 1, pair[1]) << 8);
        sum = combine(sum, word);
        i += 2;
    }
    if let [tail] = chunks.remainder() {
        sum = combine(sum, masked(i, *tail));
    }
    sum
}

/// Sequential checksum over `data`, ignoring the four bytes at
/// `checksum_offset`.
pub fn compute_seq(data: &[u8], checksum_offset: u64) -> u32 {
    let folded = sum_words(data, 0, checksum_offset);
    (u64::from(folded) + data.len() as u64) as u32
}

/// Parallel checksum; chunk sums are combined left to right, which equals
/// the sequential fold because [`combine`] is associative.
#[cfg(feature = "parallel")]
pub fn compute_par(data: &[u8], checksum_offset: u64) -> u32 {
    use rayon::prelude::*;
    let folded = data
        .par_chunks(PAR_CHUNK)
        .enumerate()
        .map(|(idx, chunk)| sum_words(chunk, (idx * PAR_CHUNK) as u64, checksum_offset))
        .reduce(|| 0, combine);
    (u64::from(folded) + data.len() as u64) as u32
}

/// Checksum with automatic dispatch: parallel for large buffers when the
/// `parallel` feature is enabled, sequential otherwise.
pub fn compute(data: &[u8], checksum_offset: u64) -> u32 {
    #[cfg(feature = "parallel")]
    if data.len() >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        return compute_par(data, checksum_offset);
    }
    compute_seq(data, checksum_offset)
}
