//! Deterministic random streams, stable elementary functions and
//! finite-difference gradient checking.
//!
//! Every random draw in the crate goes through [`RngStream`]. A stream is
//! addressed by `(master_seed, label, index)`, so independent work units
//! (ensemble members, trials, perturbation repeats) can be scheduled in any
//! order without changing their random sequences.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a master seed, a text label and an index into a 64-bit stream key.
///
/// Pure and platform independent: only wrapping 64-bit integer arithmetic
/// over the UTF-8 bytes of `label`.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    let mut h = mix64(master_seed.wrapping_add(GOLDEN_GAMMA));
    h = mix64(h ^ fnv1a(label.as_bytes()));
    h = mix64(h ^ mix64(index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1)));
    h
}

/// Counter-based random stream. The full state is `(key, counter)`, so it
/// serializes trivially and can be resumed anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub label: String,
    pub index: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str, index: u64) -> Self {
        RngStream {
            master_seed,
            label: label.to_string(),
            index,
            key: derive_seed(master_seed, label, index),
            counter: 0,
        }
    }

    /// A sub-stream keyed on this stream's key; does not advance `self`.
    pub fn child(&self, label: &str, index: u64) -> RngStream {
        RngStream {
            master_seed: self.master_seed,
            label: format!("{}/{}", self.label, label),
            index,
            key: derive_seed(self.key, label, index),
            counter: 0,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.key ^ c.wrapping_mul(GOLDEN_GAMMA)).wrapping_add(self.key))
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform integer in `0..n` (Lemire's nearly-divisionless method).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let mut m = u128::from(self.next_word()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_word()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

/// Logistic function. Output is kept strictly inside (0, 1) even where the
/// exact value rounds to 0 or 1 in f64.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    const UPPER: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, UPPER)
}

/// ln(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit against a {0,1} target.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// ln Σ exp(xᵢ), stable. Returns −∞ for an empty or all −∞ input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Default step for central differences in f64.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step h must be > 0, got {h}")));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let up = f(&point);
        point[i] = theta[i] - h;
        let down = f(&point);
        point[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} (f(+h)={up}, f(-h)={down})"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckResult {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
}

#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Compares an analytic gradient against central differences of `f`.
pub fn check_gradient<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<GradCheckResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != theta.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            got: analytic.len(),
        });
    }
    let numeric = finite_diff_grad(f, theta, h)?;
    let mut worst = GradCheckResult {
        max_relative_error: 0.0,
        worst_coordinate: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > worst.max_relative_error {
            worst = GradCheckResult {
                max_relative_error: e,
                worst_coordinate: i,
            };
        }
    }
    Ok(worst)
}

/// Population mean and variance of a slice (ddof = 0).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
