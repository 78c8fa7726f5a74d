//! Counter-based random streams and the distribution samplers used by every
//! stochastic routine in the crate.
//!
//! The generator is Philox4x64-10. A stream is identified by a 64-bit seed and
//! a 64-bit substream index (together the Philox key) and advances a 128-bit
//! block counter, so substreams cost nothing to create and Monte Carlo batches
//! are reproducible no matter how paths are scheduled across threads.

use std::f64::consts::PI;

use rand::Rng;
use rand_core::RngCore;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    ((p >> 64) as u64, p as u64)
}

/// One Philox4x64-10 block.
pub fn philox4x64_10(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic, splittable random stream.
///
/// Single-owner mutable state: hand each worker its own [`RandomStream::split`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomStream {
    key: u64,
    stream_id: u64,
    counter: u128,
    buf: [u64; 4],
    idx: usize,
}

impl RandomStream {
    /// Root stream for `seed`: substream 0, counter 0.
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0, 0)
    }

    /// Stream positioned at block `counter` of substream `stream_id`.
    pub fn at(seed: u64, stream_id: u64, counter: u128) -> Self {
        RandomStream {
            key: seed,
            stream_id,
            counter,
            buf: [0; 4],
            idx: 4,
        }
    }

    pub fn seed(&self) -> u64 {
        self.key
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Index of the next Philox block to be generated.
    pub fn counter(&self) -> u128 {
        self.counter
    }

    /// Child substream `index`. Depends only on `(seed, stream_id, index)`,
    /// never on how far `self` has advanced.
    pub fn split(&self, index: u64) -> RandomStream {
        let child = splitmix64(self.stream_id ^ splitmix64(index ^ 0x5851_F42D_4C95_7F2D));
        RandomStream::at(self.key, child, 0)
    }

    fn refill(&mut self) {
        let c = self.counter;
        self.buf = philox4x64_10(
            [c as u64, (c >> 64) as u64, 0, 0],
            [self.key, self.stream_id],
        );
        self.counter = self.counter.wrapping_add(1);
        self.idx = 0;
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Exponential with mean 1.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(self)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        if self.idx == 4 {
            self.refill();
        }
        let out = self.buf[self.idx];
        self.idx += 1;
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Root stream for `seed`.
pub fn make_stream(seed: u64) -> RandomStream {
    RandomStream::new(seed)
}

const POISSON_SWITCH: f64 = 10.0;

/// Poisson(`mean`) count. Inversion below mean 10, PTRS rejection above.
pub fn sample_poisson(s: &mut RandomStream, mean: f64) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::domain(format!(
            "Poisson mean must be finite and >= 0, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean < POISSON_SWITCH {
        Ok(poisson_inversion(s, mean))
    } else {
        Ok(poisson_ptrs(s, mean))
    }
}

fn poisson_inversion(s: &mut RandomStream, mean: f64) -> u64 {
    let mut u = s.uniform();
    let mut p = (-mean).exp();
    let mut k = 0u64;
    // the cap only matters if u lands within rounding of 1
    while u > p && k < 1000 {
        u -= p;
        k += 1;
        p *= mean / k as f64;
    }
    k
}

// Hörmann (1993), transformed rejection with squeeze.
fn poisson_ptrs(s: &mut RandomStream, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = s.uniform() - 0.5;
        let v = s.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + invalpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Gamma variate with the given shape and rate (mean `shape / rate`).
pub fn sample_gamma(s: &mut RandomStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(Error::domain(format!(
            "gamma parameters must be positive and finite, got shape {shape}, rate {rate}"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?;
    Ok(dist.sample(s))
}

/// Standard totally skewed (beta = 1) stable variate by the Chambers–Mallows–Stuck
/// transform; characteristic function `exp(-|u|^a (1 - i sgn(u) tan(pi a / 2)))`.
fn stable_skewed_standard(s: &mut RandomStream, alpha: f64) -> f64 {
    let v = PI * (s.uniform() - 0.5);
    let w = s.exp1();
    let half = PI * alpha / 2.0;
    let t = half.tan();
    let shift = t.atan() / alpha;
    let scale = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    let arg = alpha * (v + shift);
    scale * arg.sin() / v.cos().powf(1.0 / alpha)
        * ((v - arg).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variate with `E exp(-lambda X) = exp(-c lambda^alpha)`, `0 < alpha < 1`.
pub fn sample_one_sided_stable(s: &mut RandomStream, alpha: f64, c: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "one-sided stable index must lie in (0,1), got {alpha}"
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!(
            "stable scale must be positive, got {c}"
        )));
    }
    let sigma = (c * (PI * alpha / 2.0).cos()).powf(1.0 / alpha);
    // the transform can round to 0 for tiny alpha; keep the variate positive
    Ok((sigma * stable_skewed_standard(s, alpha)).max(f64::MIN_POSITIVE))
}

/// Laplace-exponent constant `Gamma(2-a) / (a (a-1))` of the compensated stable
/// process with Lévy measure `z^{-1-a} dz`, `1 < a < 2`.
pub fn spectrally_positive_constant(alpha: f64) -> f64 {
    gamma(2.0 - alpha) / (alpha * (alpha - 1.0))
}

/// Increment over `dt` of the compensated spectrally positive stable process with
/// Lévy measure `z^{-1-alpha} dz`; `E exp(-lambda X) = exp(dt C lambda^alpha)` with
/// `C = spectrally_positive_constant(alpha)`. Centered, may be negative.
pub fn sample_spectrally_positive_stable_increment(
    s: &mut RandomStream,
    alpha: f64,
    dt: f64,
) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::domain(format!(
            "spectrally positive stable index must lie in (1,2), got {alpha}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let k = dt * spectrally_positive_constant(alpha);
    let sigma = (-k * (PI * alpha / 2.0).cos()).powf(1.0 / alpha);
    Ok(sigma * stable_skewed_standard(s, alpha))
}

/// Uniform index in `0..n`.
pub fn sample_index(s: &mut RandomStream, n: usize) -> usize {
    s.random_range(0..n)
}
