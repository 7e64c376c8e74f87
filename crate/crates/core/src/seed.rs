/// Derives an independent stream seed from a base seed and a path of labels.
///
/// Each label is folded in with a splitmix64 round, so `(base, [a, b])` and
/// `(base, [b, a])` give unrelated seeds.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash, used to turn identifiers into seed labels.
pub fn hash_label(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
