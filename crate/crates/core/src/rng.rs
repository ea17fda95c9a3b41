//! Seeded random streams.
//!
//! Every stochastic step in the simulator draws from its own ChaCha8 stream,
//! keyed by `(seed, purpose, a, b)` through [`stream`]. Client `k` in round
//! `t` therefore gets the same draws no matter in which order (or on which
//! thread) clients are processed.
//!
//! The derived distributions are written out explicitly instead of going
//! through `rand_distr`, so their exact draw sequence is part of this crate's
//! contract:
//!
//! * uniform `[0,1)`: top 53 bits of one `u64`, scaled by `2^-53`;
//! * bounded integer `below(n)`: `(u64 * n) >> 64` (multiply-shift);
//! * standard normal: Box–Muller on two uniforms, cosine branch only;
//! * gamma(shape): Marsaglia–Tsang squeeze method, with the
//!   `U^(1/shape)` boost for `shape < 1`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Distinct tags keep streams for different steps apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Synth = 2,
    Partition = 3,
    Backdoor = 4,
    LocalShuffle = 5,
    AuxRelabel = 6,
    AuxShuffle = 7,
    Finetune = 8,
    Mia = 9,
    Misc = 10,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from the run seed and a stream coordinate.
pub fn derive_key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = mix64(seed);
    h = mix64(h ^ purpose as u64);
    h = mix64(h ^ a);
    mix64(h ^ b)
}

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, a, b))
}

pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)`.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // 1 - u keeps the log argument in (0, 1].
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gamma(shape, 1) variate.
pub fn gamma(rng: &mut impl RngCore, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let g = gamma(rng, shape + 1.0);
        let u = 1.0 - uniform(rng);
        return g * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x = standard_normal(rng);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u = uniform(rng);
        if u < 1.0 - 0.0331 * x * x * x * x {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draws from `Dir(concentration * 1_k)` by normalising gamma variates.
pub fn dirichlet(rng: &mut impl RngCore, concentration: f64, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| gamma(rng, concentration)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // Every variate underflowed (tiny concentration); fall back to a point mass.
        let mut p = vec![0.0; k];
        p[below(rng, k)] = 1.0;
        return p;
    }
    draws.into_iter().map(|g| g / total).collect()
}

/// Fisher–Yates, walking from the back: swap `i` with `below(i + 1)`.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

pub fn permutation(rng: &mut impl RngCore, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(rng, &mut idx);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream(7, Purpose::LocalShuffle, 1, 2);
        let mut b = stream(7, Purpose::LocalShuffle, 1, 2);
        let mut c = stream(7, Purpose::LocalShuffle, 2, 1);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut rng = stream(1, Purpose::Misc, 0, 0);
        for &shape in &[0.3, 1.0, 4.5] {
            let n = 20_000;
            let mean = (0..n).map(|_| gamma(&mut rng, shape)).sum::<f64>() / n as f64;
            assert!(
                (mean - shape).abs() < 0.05 * shape.max(1.0),
                "shape {shape}: mean {mean}"
            );
        }
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = stream(3, Purpose::Misc, 0, 0);
        for _ in 0..100 {
            let p = dirichlet(&mut rng, 0.5, 6);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = stream(3, Purpose::Misc, 1, 0);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(below(&mut rng, n) < n);
            }
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = stream(9, Purpose::Misc, 0, 0);
        let mut p = permutation(&mut rng, 100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
