//! Counter-based seed streams.
//!
//! Every random draw in the crate is keyed by `(base seed, index)`, so results
//! never depend on thread scheduling or the number of workers.

/// SplitMix64 finaliser.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for element `index` of the stream rooted at `base`.
#[inline]
pub fn derive(base: u64, index: u64) -> u64 {
    mix(mix(base) ^ mix(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Named sub-streams so that, e.g., input draws and query draws never share seeds.
pub mod stream {
    pub const INPUTS: u64 = 0x696e_7075_7473;
    pub const QUERIES: u64 = 0x7175_6572_6965;
    pub const ADAPTIVE: u64 = 0x6164_6170_7476;
    pub const TRIALS: u64 = 0x7472_6961_6c73;
    pub const BOOTSTRAP: u64 = 0x626f_6f74_7374;
    pub const TEST_DATA: u64 = 0x7465_7374_6474;
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_is_a_pure_function() {
        assert_eq!(derive(7, 3), derive(7, 3));
        assert_ne!(derive(7, 3), derive(7, 4));
        assert_ne!(derive(7, 3), derive(8, 3));
    }

    #[test]
    fn no_collisions_in_a_short_stream() {
        let seen: HashSet<u64> = (0..10_000).map(|i| derive(42, i)).collect();
        assert_eq!(seen.len(), 10_000);
    }
}
