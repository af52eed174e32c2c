//! Counter-based seed splitting.
//!
//! Every random stream in a run is keyed by `(master seed, tag, indices...)`
//! and mixed through SplitMix64, so any frame of any sweep point can be
//! regenerated independently of execution order.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream tags. Distinct tags never share a key.
pub mod tag {
    pub const BITS: u64 = 0x6269_7473;
    pub const NOISE_TRAINING: u64 = 0x6e74_726e;
    pub const NOISE_PAYLOAD: u64 = 0x6e70_6c64;
    pub const NOISE_WAVEFORM: u64 = 0x6e77_6176;
    pub const DELAY: u64 = 0x646c_6179;
    pub const POINT: u64 = 0x706f_696e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Circular complex Gaussian with total variance `variance` (half per axis).
pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

pub fn random_bits<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u8> {
    let mut bits = Vec::with_capacity(n);
    while bits.len() < n {
        let word: u64 = rng.next_u64();
        let take = (n - bits.len()).min(64);
        bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
    }
    bits
}
