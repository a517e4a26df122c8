//! Seeded, stream-addressable random number generation.
//!
//! Every consumer draws from `(seed, stream)` pairs backed by ChaCha20, a
//! counter-based generator. Streams are independent, so a random matrix
//! generated column-by-column is column-extensible: adding columns never
//! changes the existing ones. All randomness in the crate flows through
//! explicit seeds; there is no global generator.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::linalg::DenseMat;

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal vector for the given `(seed, stream)`.
pub fn gaussian_vector(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// n-by-cols matrix with i.i.d. standard-normal entries; column `c` is drawn
/// from stream `c`, making the matrix column-extensible under a fixed seed.
pub fn gaussian_matrix(seed: u64, n: usize, cols: usize) -> DenseMat {
    let mut m = DenseMat::zeros(n, cols);
    for c in 0..cols {
        let col = gaussian_vector(seed, c as u64, n);
        m.set_col(c, &col);
    }
    m
}

/// Rademacher (+-1) vector for the given `(seed, stream)`.
pub fn rademacher_vector(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Uniform points in the rectangle `[x0,x1] x [y0,y1]`.
pub fn uniform_points(seed: u64, count: usize, rect: [f64; 4]) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(seed, 0);
    let [x0, y0, x1, y1] = rect;
    (0..count)
        .map(|_| {
            let x = x0 + (x1 - x0) * rng.gen::<f64>();
            let y = y0 + (y1 - y0) * rng.gen::<f64>();
            [x, y]
        })
        .collect()
}

/// Derive an unrelated seed from `(seed, tag)` (splitmix64 finalizer).
pub fn split_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
