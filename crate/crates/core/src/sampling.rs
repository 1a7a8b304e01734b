//! Photon-number samplers driven by a single uniform per draw where possible.
//!
//! The per-pulse means are fixed for a whole run, so the Poisson CDF is
//! tabulated once, with a guide table that jumps close to the answer. Binomial thinning with
//! small `n * p` is done by sequential inversion; larger cases fall back to
//! `rand_distr`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::rng::CounterRng;

/// Above this mean the CDF table gets long and `exp(-mean)` loses precision.
const TABLE_MAX_MEAN: f64 = 500.0;
/// Inversion cost grows with `n * p`; past this use BTPE.
const INVERSION_MAX_NP: f64 = 20.0;

/// Poisson sampler with a precomputed cumulative table.
#[derive(Clone, Debug)]
pub struct PoissonSampler {
    mean: f64,
    kind: PoissonKind,
}

#[derive(Clone, Debug)]
enum PoissonKind {
    Zero,
    Table { cdf: Vec<f64>, guide: Vec<u32> },
    Fallback(Poisson<f64>),
}

impl PoissonSampler {
    pub fn new(mean: f64) -> Self {
        assert!(mean.is_finite() && mean >= 0.0, "Poisson mean must be finite and >= 0");
        let kind = if mean == 0.0 {
            PoissonKind::Zero
        } else if mean <= TABLE_MAX_MEAN {
            let cdf = poisson_cdf_table(mean);
            let m = 2 * cdf.len();
            let guide = (0..m)
                .map(|i| cdf.partition_point(|&c| c <= i as f64 / m as f64) as u32)
                .collect();
            PoissonKind::Table { cdf, guide }
        } else {
            PoissonKind::Fallback(Poisson::new(mean).expect("positive finite mean"))
        };
        Self { mean, kind }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample(&self, rng: &mut CounterRng) -> u64 {
        match &self.kind {
            PoissonKind::Zero => 0,
            PoissonKind::Table { cdf, guide } => {
                let u = rng.next_f64();
                // guide[i] is the answer for u = i / len, a lower bound here
                let mut k = guide[(u * guide.len() as f64) as usize] as usize;
                while k < cdf.len() && cdf[k] <= u {
                    k += 1;
                }
                if k < cdf.len() {
                    k as u64
                } else {
                    self.continue_tail(cdf, u)
                }
            }
            PoissonKind::Fallback(d) => d.sample(rng) as u64,
        }
    }

    /// Sequential inversion past the end of the table (probability < 1e-17).
    fn continue_tail(&self, cdf: &[f64], u: f64) -> u64 {
        let mut k = cdf.len() as u64 - 1;
        let mut cum = cdf[cdf.len() - 1];
        let mut p = (-self.mean + k as f64 * self.mean.ln() - ln_factorial(k)).exp();
        loop {
            k += 1;
            p *= self.mean / k as f64;
            cum += p;
            if u < cum || p == 0.0 {
                return k;
            }
        }
    }
}

fn poisson_cdf_table(mean: f64) -> Vec<f64> {
    let ln_mean = mean.ln();
    let mut cdf = Vec::new();
    let mut cum = 0.0;
    let mut ln_p = -mean;
    let mut k = 0u64;
    loop {
        let p = ln_p.exp();
        cum += p;
        cdf.push(cum);
        // stop once past the mode and the remaining tail is negligible
        if k as f64 > mean && p < 1e-17 * cum.max(1e-300) {
            break;
        }
        k += 1;
        ln_p += ln_mean - (k as f64).ln();
    }
    cdf
}

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Geometric (Bose-Einstein) photon number with the given mean:
/// `P(n) = (1 - q) q^n` with `q = mean / (1 + mean)`.
#[derive(Clone, Debug)]
pub struct GeometricSampler {
    mean: f64,
    ln_q: f64,
}

impl GeometricSampler {
    pub fn new(mean: f64) -> Self {
        assert!(mean.is_finite() && mean >= 0.0, "geometric mean must be finite and >= 0");
        let ln_q = if mean == 0.0 {
            f64::NEG_INFINITY
        } else {
            (mean / (1.0 + mean)).ln()
        };
        Self { mean, ln_q }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample(&self, rng: &mut CounterRng) -> u64 {
        if self.mean == 0.0 {
            return 0;
        }
        // 1 - u lies in (0, 1], so the log is finite and <= 0
        let v = (1.0 - rng.next_f64()).ln() / self.ln_q;
        v.floor() as u64
    }
}

/// Number of survivors when each of `n` items survives independently with
/// probability `p`.
pub fn binomial_thin(n: u64, p: f64, rng: &mut CounterRng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let np = n as f64 * p;
    if np > INVERSION_MAX_NP || n > i32::MAX as u64 {
        return Binomial::new(n, p).expect("valid binomial").sample(rng);
    }
    let q = 1.0 - p;
    let p0 = q.powi(n as i32);
    if p0 < 1e-280 {
        return Binomial::new(n, p).expect("valid binomial").sample(rng);
    }
    let u = rng.next_f64();
    let ratio = p / q;
    let mut k = 0u64;
    let mut prob = p0;
    let mut cum = p0;
    while u >= cum && k < n {
        prob *= (n - k) as f64 / (k + 1) as f64 * ratio;
        k += 1;
        cum += prob;
    }
    k
}

/// Detector timing jitter in whole picoseconds.
#[inline]
pub fn gaussian_jitter_ps(sigma_ps: f64, rng: &mut CounterRng) -> i64 {
    if sigma_ps == 0.0 {
        return 0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    (z * sigma_ps).round() as i64
}
