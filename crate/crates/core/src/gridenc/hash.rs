/// Multiplier applied to the second cell coordinate.
pub const HASH_PRIME: u32 = 2_654_435_761;

/// Spatial hash of a 2D cell: `(x * 1 XOR y * 2654435761) mod T` with 32-bit
/// wrapping multiplication. `table_size` must be a power of two.
#[inline]
pub fn hash_index(x: u32, y: u32, table_size: u32) -> u32 {
    debug_assert!(table_size.is_power_of_two());
    (x ^ y.wrapping_mul(HASH_PRIME)) & (table_size - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle(x: u32, y: u32, t: u32) -> u32 {
        let m = BigUint::from(1u64 << 32);
        let xa = (BigUint::from(x) * BigUint::from(1u32)) % &m;
        let yb = (BigUint::from(y) * BigUint::from(HASH_PRIME)) % &m;
        let idx = (xa ^ yb) % BigUint::from(t);
        u32::try_from(idx).unwrap()
    }

    #[test]
    fn zero_and_passthrough() {
        assert_eq!(hash_index(0, 0, 1 << 14), 0);
        for x in [1, 7, 1000, 16383] {
            assert_eq!(hash_index(x, 0, 1 << 14), x);
        }
    }

    #[test]
    fn unit_cell() {
        // 1 XOR 2654435761 = 2654435760; mod 16384 = 2654435760 - 162014 * 16384
        assert_eq!(hash_index(1, 1, 16384), 2_654_435_760 % 16384);
        assert_eq!(hash_index(1, 1, 16384), oracle(1, 1, 16384));
    }

    #[test]
    fn matches_big_integer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20_000 {
            let t = 1u32 << rng.gen_range(0..32);
            let (x, y) = (rng.gen(), rng.gen());
            assert_eq!(hash_index(x, y, t), oracle(x, y, t));
        }
    }
}
