//! Seeded random streams and the discrete samplers shared by the design and
//! bootstrap code.
//!
//! Every random quantity in the crate is drawn from a stream identified by
//! `(seed, purpose tag, index)`. Streams are independent of scheduling, so a
//! replicate or Monte Carlo repetition can be recomputed in isolation.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different operations disjoint.
pub mod tag {
    pub const POISSON_DESIGN: u64 = 0x01;
    pub const PPSWR_DESIGN: u64 = 0x02;
    pub const STRATIFIED_DESIGN: u64 = 0x03;
    pub const TWO_STAGE_DESIGN: u64 = 0x04;
    pub const POISSON_BOOT: u64 = 0x11;
    pub const PPSWR_BOOT: u64 = 0x12;
    pub const STRATIFIED_BOOT: u64 = 0x13;
    pub const TWO_STAGE_BOOT: u64 = 0x14;
    pub const MIXTURE: u64 = 0x21;
    pub const POPULATION: u64 = 0x31;
    pub const MC_REP: u64 = 0x32;
    pub const SAMPLE: u64 = 0x33;
    pub const REPLICATES: u64 = 0x34;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a purpose tag into a new 64-bit seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index.rotate_left(17))
}

/// Counter-based stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, trials: u64, p: f64) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials, p).expect("binomial parameters validated").sample(rng)
}

/// Multinomial draw by sequential conditional binomials; O(k) in the number
/// of categories and independent of the trial count.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, trials: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(probs.len());
    let mut remaining = trials;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if k + 1 == probs.len() {
            out.push(remaining);
            break;
        }
        let draw = if remaining == 0 || mass <= 0.0 { 0 } else { binomial(rng, remaining, (p / mass).clamp(0.0, 1.0)) };
        out.push(draw);
        remaining -= draw;
        mass -= p;
    }
    out
}

/// Categorical sampler over unnormalized nonnegative weights (cumulative
/// table with binary search).
#[derive(Debug, Clone)]
pub struct Categorical {
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn new(weights: &[f64]) -> Option<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|&w| {
                acc += w.max(0.0);
                acc
            })
            .collect();
        (acc > 0.0 && acc.is_finite()).then_some(Self { cumulative })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        if idx < self.cumulative.len() {
            return idx;
        }
        // u rounded up to the total: fall back to the last positive-width category.
        let mut idx = self.cumulative.len() - 1;
        while idx > 0 && self.cumulative[idx] == self.cumulative[idx - 1] {
            idx -= 1;
        }
        idx
    }
}

/// `k` distinct indices from `0..n`, uniformly without replacement (Floyd).
pub fn sample_without_replacement<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for j in (n - k)..n {
        let t = rng.random_range(0..=j);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen
}
