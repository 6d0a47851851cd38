//! Deterministic seed derivation. Every replication draws its ChaCha stream
//! from a fixed 64-bit avalanche mix of (base_seed, index), so a rep's
//! trajectory never depends on how many other reps run.

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a stream index (replication number, generator
/// attempt, ...). mix(b, i) = splitmix64(b XOR splitmix64(i + 1)).
pub fn mix(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}
