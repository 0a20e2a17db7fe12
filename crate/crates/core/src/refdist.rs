//! Reference distributions: χ², F and normal tails, and weighted sums of
//! independent χ²(1) variables `Σ c_i Z_i²`.

use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, tag};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 1_000_000;

/// Regularized lower incomplete gamma `P(a, x)` and its complement.
fn incomplete_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let log_prefix = a * libm::log(x) - x - libm::lgamma(a);
    if x < a + 1.0 {
        // Series.
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (sum.ln_exp(log_prefix)).min(1.0);
        (p, 1.0 - p)
    } else {
        // Continued fraction (modified Lentz).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (h.ln_exp(log_prefix)).min(1.0);
        (1.0 - q, q)
    }
}

trait LnExp {
    fn ln_exp(self, log_prefix: f64) -> f64;
}

impl LnExp for f64 {
    /// `self · exp(log_prefix)` without intermediate overflow.
    fn ln_exp(self, log_prefix: f64) -> f64 {
        if self <= 0.0 {
            0.0
        } else {
            libm::exp(libm::log(self) + log_prefix)
        }
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let log_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    if x < (a + 1.0) / (a + b + 2.0) {
        beta_continued_fraction(a, b, x).ln_exp(log_front) / a
    } else {
        1.0 - beta_continued_fraction(b, a, 1.0 - x).ln_exp(log_front) / b
    }
}

/// `P(χ²(df) > x)`.
pub fn chisq_sf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(invalid("chi-square degrees of freedom must be positive"));
    }
    if x.is_nan() {
        return Err(invalid("chi-square argument is NaN"));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(incomplete_gamma(df / 2.0, x / 2.0).1.clamp(0.0, 1.0))
}

pub fn chisq_cdf(x: f64, df: f64) -> f64 {
    chisq_sf(x, df).map_or(f64::NAN, |s| 1.0 - s)
}

/// `P(F(df1, df2) > x)`.
pub fn f_sf(x: f64, df1: f64, df2: f64) -> Result<f64> {
    if !(df1 > 0.0 && df2 > 0.0) || df1.is_nan() || df2.is_nan() {
        return Err(invalid("F degrees of freedom must be positive"));
    }
    if x.is_nan() {
        return Err(invalid("F argument is NaN"));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    if df2 == f64::INFINITY {
        return chisq_sf(df1 * x, df1);
    }
    Ok(incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x)).clamp(0.0, 1.0))
}

/// Standard normal upper tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

/// Law of `Σ c_i Z_i²` with independent standard normal `Z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSqMixture {
    /// Weights in descending order; negative estimates are clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalue estimates that were clamped.
    pub clamped: usize,
}

impl ChiSqMixture {
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("mixture needs at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite mixture eigenvalue"));
        }
        let mut clamped = 0;
        for c in eigenvalues.iter_mut() {
            if *c < 0.0 {
                clamped += 1;
                *c = 0.0;
            }
        }
        if clamped > 0 {
            log::warn!("{clamped} negative eigenvalue estimate(s) clamped to zero");
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { eigenvalues, clamped })
    }

    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        mixture_sample(&self.eigenvalues, count, seed).expect("validated eigenvalues")
    }
}

/// Eigenvalues of `Σ̂ Î`, computed from the symmetric similar matrix
/// `Î^{1/2} Σ̂ Î^{1/2}`.
pub fn mixture_eigenvalues(covariance: &Matrix, information: &Matrix) -> Result<ChiSqMixture> {
    let p = information.nrows();
    if covariance.nrows() != p || covariance.ncols() != p || information.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: covariance.nrows() });
    }
    let root = linalg::sqrt_spd(information).map_err(|_| invalid("information matrix is not positive definite"))?;
    let sym = &root * linalg::symmetrize(covariance) * &root;
    ChiSqMixture::new(linalg::sym_eigenvalues(&sym))
}

/// `count` independent draws of `Σ c_i Z_i²`, sorted ascending.
pub fn mixture_sample(weights: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(invalid("mixture needs at least one eigenvalue"));
    }
    let mut rng = rng::stream(seed, tag::MIXTURE, 0);
    let mut out: Vec<f64> = (0..count)
        .map(|_| {
            weights
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c * z * z
                })
                .sum()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Interpolated empirical quantile (level `prob`) of a sorted sample.
pub fn sorted_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Monte Carlo quantile at probability level `prob` from `count` draws.
pub fn mixture_quantile(weights: &[f64], prob: f64, count: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(invalid("quantile level outside [0, 1]"));
    }
    if count == 0 {
        return Err(invalid("quantile needs at least one draw"));
    }
    Ok(sorted_quantile(&mixture_sample(weights, count, seed)?, prob))
}

/// Two-sample Kolmogorov–Smirnov distance between sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov distance of a sorted sample against `cdf`.
pub fn ks_one_sample(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}
