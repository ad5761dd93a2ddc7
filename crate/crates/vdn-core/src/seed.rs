//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one root seed, split per subsystem
//! (data sampling, parameter init, noise synthesis) so that fixing the root
//! seed fixes every stream independently of call order.

/// Derive a child seed from a root seed and a stream label.
pub fn mix(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer over the xor.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(root ^ h)
}

/// Derive a per-item seed, e.g. one seed per image in a dataset.
pub fn mix_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(mix(root, label) ^ splitmix64(index.wrapping_add(0x9e3779b97f4a7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
