//! Keyed random streams. Every random draw is addressed by (seed, replica,
//! purpose, site, visit) so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::{Site, MAX_DIM};

const PURPOSE_WALK: u64 = 1;
const PURPOSE_ENV: u64 = 2;
const PURPOSE_ORACLE: u64 = 3;

/// SplitMix64 output function, used only to fold keys together.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold(parts: &[u64]) -> [u8; 32] {
    let mut acc = 0x9e37_79b9_7f4a_7c15u64;
    let mut out = [0u8; 32];
    for (k, chunk) in out.chunks_mut(8).enumerate() {
        for &p in parts {
            acc = mix(acc ^ p.wrapping_add(k as u64));
        }
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    out
}

pub fn site_key(x: &Site) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for i in 0..MAX_DIM {
        h = mix(h ^ (x.coord(i) as i64 as u64)).rotate_left(7);
    }
    h
}

/// Streams for one replica of one run.
#[derive(Clone, Debug)]
pub struct ReplicaStreams {
    walk_key: [u8; 32],
    env_key: u64,
}

impl ReplicaStreams {
    pub fn new(seed: u64, replica: u64) -> Self {
        ReplicaStreams {
            walk_key: fold(&[seed, replica, PURPOSE_WALK]),
            env_key: u64::from_le_bytes(fold(&[seed, replica, PURPOSE_ENV])[..8].try_into().unwrap()),
        }
    }

    /// The stream that drives the walk's own steps.
    pub fn walk(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.walk_key)
    }

    /// The uniform that selects the environment at `x` on visit `visit`
    /// (visit 0 for static environments). Counter-based: a keyed hash of
    /// (x, visit), so it does not matter which sites were drawn before.
    pub fn site_uniform(&self, x: &Site, visit: u64) -> f64 {
        let h = mix(mix(self.env_key ^ site_key(x)).wrapping_add(visit.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// A stream for test oracles and one-off sampling.
pub fn oracle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(fold(&[seed, 0, PURPOSE_ORACLE]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a = ReplicaStreams::new(7, 3);
        let b = ReplicaStreams::new(7, 3);
        let x = Site::from_coords(&[1, -2, 3]);
        assert_eq!(a.site_uniform(&x, 0), b.site_uniform(&x, 0));
        let mut wa = a.walk();
        let mut wb = b.walk();
        for _ in 0..10 {
            assert_eq!(wa.random::<u64>(), wb.random::<u64>());
        }
    }

    #[test]
    fn streams_differ_by_key() {
        let a = ReplicaStreams::new(7, 3);
        let b = ReplicaStreams::new(7, 4);
        let x = Site::from_coords(&[1]);
        let y = Site::from_coords(&[0, 1]);
        assert_ne!(a.site_uniform(&x, 0), b.site_uniform(&x, 0));
        assert_ne!(a.site_uniform(&x, 0), a.site_uniform(&y, 0));
        assert_ne!(a.site_uniform(&x, 0), a.site_uniform(&x, 1));
    }

    #[test]
    fn site_uniforms_look_uniform() {
        let s = ReplicaStreams::new(1, 0);
        let n = 20_000;
        let mut mean = 0.0;
        for i in 0..n {
            mean += s.site_uniform(&Site::from_coords(&[i, -i / 3]), 0);
        }
        mean /= n as f64;
        // standard error of the mean is sqrt(1/12/n) ≈ 0.002
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
