//! Seed streams. Every consumer of randomness (noise sampler, perturbation
//! draw, rollout) owns a generator derived from a root seed and a path of
//! indices, so parallel and sequential execution produce identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an index path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &i| {
        splitmix64(acc ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    rng(derive(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_differ_and_repeat() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[2, 1]).random();
        let c: u64 = stream(7, &[1, 2]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
