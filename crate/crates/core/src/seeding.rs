//! Order-independent seed derivation.

/// One round of the splitmix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the item identified by `parts` under `master`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_parts_give_distinct_seeds() {
        let a = derive_seed(7, &[2, 2, 60, 0]);
        assert_ne!(a, derive_seed(7, &[2, 2, 60, 1]));
        assert_ne!(a, derive_seed(8, &[2, 2, 60, 0]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_eq!(a, derive_seed(7, &[2, 2, 60, 0]));
    }
}
