//! Stable seed derivation.
//!
//! Seeds must not depend on the platform, the toolchain or the order in which
//! parallel work is scheduled, so they are mixed with FNV-1a and SplitMix64
//! rather than `std::hash`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Child seed of `parent` for the given string path, e.g.
/// `derive_seed(master, &["PR3", "gamma3", "manual"])`.
pub fn derive_seed(parent: u64, path: &[&str]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, part| {
        splitmix64(acc ^ fnv1a(part.as_bytes()))
    })
}

/// Child seed of `parent` for an integer index.
pub fn derive_index_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
