//! Per-SSTable Bloom filter: 10 bits per key, 7 probes via double hashing.

use crate::record::fnv1a64;

pub const BITS_PER_KEY: usize = 10;
pub const NUM_PROBES: u32 = 7;

pub fn build(keys: impl Iterator<Item = impl AsRef<[u8]>>, n_keys: usize) -> Vec<u8> {
    let n_bits = (n_keys * BITS_PER_KEY).max(64);
    let n_bytes = n_bits.div_ceil(8);
    let mut bits = vec![0u8; n_bytes];
    let n_bits = (n_bytes * 8) as u64;
    for key in keys {
        let mut h = fnv1a64(key.as_ref());
        let delta = h.rotate_right(17) | 1;
        for _ in 0..NUM_PROBES {
            let pos = h % n_bits;
            bits[(pos / 8) as usize] |= 1 << (pos % 8);
            h = h.wrapping_add(delta);
        }
    }
    bits
}

pub fn contains(bits: &[u8], key: &[u8]) -> bool {
    if bits.is_empty() {
        return true;
    }
    let n_bits = (bits.len() * 8) as u64;
    let mut h = fnv1a64(key);
    let delta = h.rotate_right(17) | 1;
    for _ in 0..NUM_PROBES {
        let pos = h % n_bits;
        if bits[(pos / 8) as usize] & (1 << (pos % 8)) == 0 {
            return false;
        }
        h = h.wrapping_add(delta);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_reports_absent_for_present_keys() {
        let keys: Vec<Vec<u8>> = (0..10_000u32).map(|i| i.to_be_bytes().to_vec()).collect();
        let bits = build(keys.iter(), keys.len());
        for k in &keys {
            assert!(contains(&bits, k));
        }
    }

    #[test]
    fn false_positive_rate_is_low() {
        let keys: Vec<Vec<u8>> = (0..10_000u32).map(|i| i.to_be_bytes().to_vec()).collect();
        let bits = build(keys.iter(), keys.len());
        let mut fp = 0;
        let probes = 20_000u32;
        for i in 0..probes {
            if contains(&bits, &(1_000_000 + i).to_be_bytes()) {
                fp += 1;
            }
        }
        // ~0.8% expected at 10 bits/key; allow generous slack.
        assert!(fp < probes / 20, "false positives: {fp}/{probes}");
    }
}
