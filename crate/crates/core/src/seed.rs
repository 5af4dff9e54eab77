//! Deterministic seed splitting.
//!
//! All randomness in the toolkit funnels through one base seed which is
//! expanded per (layer, group, stream) with `derive_seed`. The split uses
//! FNV-1a rather than `std`'s hasher so the mapping is stable across
//! platforms and compiler releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed for the RNG stream `stream` of output group `j` in layer `layer`:
/// `base ^ fnv1a(layer || j || stream)`.
pub fn derive_seed(base: u64, layer: &str, j: usize, stream: &str) -> u64 {
    let mut h = FNV_OFFSET;
    h = fnv1a(h, layer.as_bytes());
    h = fnv1a(h, &(j as u64).to_le_bytes());
    h = fnv1a(h, stream.as_bytes());
    base ^ h
}
