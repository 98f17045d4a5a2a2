//! Deterministic random streams and synthetic token inputs.
//!
//! Everything here is seeded: the same seed yields the same bytes on every
//! platform because the stream is ChaCha8 and the uniform mapping uses only
//! exactly-rounded IEEE operations. Gaussian sampling goes through
//! Box-Muller on top of that stream.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::numerics::Matrix;

/// Seeded random source with uniform and gaussian draws.
pub struct SeededRng {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Symmetric uniform draw in `(-1, 1]`, scaled by `sqrt(3)` to unit
    /// variance. Uses no transcendental functions, so the values are
    /// bit-identical across platforms.
    pub fn uniform_unit_variance(&mut self) -> f64 {
        let u = 1.0 - self.uniform(); // (0, 1]
        (2.0 * u - 1.0) * 3.0f64.sqrt()
    }

    /// Standard normal draw via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `n` x `d` matrix of iid standard gaussian tokens; rows are nearly
/// orthogonal for moderate `d`.
pub fn gaussian_tokens(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let data = (0..n * d).map(|_| rng.normal() as f32).collect();
    Matrix::new(n, d, data).expect("gaussian draw is finite")
}

/// Tokens drawn around `clusters` shared centers: row `i` is center
/// `i % clusters` plus `noise`-scaled gaussian jitter. Small noise makes the
/// rows highly redundant.
pub fn clustered_tokens(n: usize, d: usize, clusters: usize, noise: f32, seed: u64) -> Matrix {
    assert!(clusters >= 1, "cluster count must be positive");
    let mut rng = SeededRng::new(seed);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| (0..d).map(|_| rng.normal() as f32).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let center = &centers[i % clusters];
        for &c in center {
            data.push(c + noise * rng.normal() as f32);
        }
    }
    Matrix::new(n, d, data).expect("clustered draw is finite")
}

/// `distinct * repeat` tokens where each of the `distinct` base rows appears
/// `repeat` times consecutively — exact duplicates by construction.
pub fn duplicated_tokens(distinct: usize, repeat: usize, d: usize, seed: u64) -> Matrix {
    assert!(repeat >= 1, "repeat count must be positive");
    let base = gaussian_tokens(distinct, d, seed);
    let mut data = Vec::with_capacity(distinct * repeat * d);
    for i in 0..distinct {
        for _ in 0..repeat {
            data.extend_from_slice(base.row(i));
        }
    }
    Matrix::new(distinct * repeat, d, data).expect("duplicated draw is finite")
}

/// Fixed sinusoidal position table: `pe[p][2i] = sin(p / 10000^(2i/d))`,
/// `pe[p][2i+1]` the matching cosine.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Matrix {
    let mut data = vec![0.0f32; n * d];
    for p in 0..n {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            data[p * d + i] = if i % 2 == 0 {
                angle.sin() as f32
            } else {
                angle.cos() as f32
            };
        }
    }
    Matrix::new(n, d, data).expect("sinusoid is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian_tokens(4, 8, 7);
        let b = gaussian_tokens(4, 8, 7);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_tokens(4, 8, 8));
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = SeededRng::new(3);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            let s = rng.uniform_unit_variance();
            assert!(s.abs() <= 3.0f64.sqrt());
        }
    }

    #[test]
    fn duplicated_tokens_repeat_exactly() {
        let m = duplicated_tokens(3, 4, 5, 11);
        assert_eq!(m.rows(), 12);
        for g in 0..3 {
            for r in 1..4 {
                assert_eq!(m.row(g * 4), m.row(g * 4 + r));
            }
        }
    }

    #[test]
    fn clustered_tokens_are_more_aligned_than_gaussian() {
        let clustered = clustered_tokens(32, 16, 4, 0.05, 5);
        let random = gaussian_tokens(32, 16, 5);
        let mean_sim = |m: &Matrix| {
            let mut total = 0.0;
            let mut pairs = 0;
            for i in 0..m.rows() {
                for j in (i + 1)..m.rows() {
                    total += cosine_similarity(m.row(i), m.row(j));
                    pairs += 1;
                }
            }
            total / pairs as f32
        };
        assert!(mean_sim(&clustered) > mean_sim(&random) + 0.1);
    }

    #[test]
    fn sinusoid_first_position_alternates_zero_one() {
        let pe = sinusoidal_encoding(2, 6);
        for i in 0..6 {
            let want = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert!((pe.get(0, i) - want).abs() < 1e-7);
        }
    }
}
