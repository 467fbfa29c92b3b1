//! Scalar numerics shared across the crate: Gauss–Hermite expectations under
//! the standard normal, the kernel `psi(γ) = E tanh(γ + √γ G)`, and seeded
//! splittable random streams.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_ORDER: usize = 101;
pub const MAX_ORDER: usize = 512;

/// Gauss–Hermite rule for `E[f(z)]`, `z ~ N(0, 1)`.
///
/// Nodes are in probabilists' scaling and the weights sum to one, so an
/// expectation is a plain weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum without the finiteness check. Only for integrands that
    /// are bounded by construction.
    #[inline]
    pub(crate) fn sum<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Builds the `order`-point rule, exact for polynomials of degree up to
/// `2·order − 1` under the standard Gaussian.
///
/// Zeros of the normalized Hermite polynomial are bracketed by a scan,
/// bisected and polished with Newton steps; the normalized three-term
/// recurrence keeps the evaluation in range for all supported orders. At very high
/// orders the outermost weights fall below the smallest positive `f64` and
/// are stored as zero.
pub fn gauss_hermite_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(invalid(format!(
            "quadrature order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if order == 1 {
        return Ok(QuadratureRule {
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }

    // pi^(-1/4)
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let n = order;
    let nf = n as f64;
    let half = n / 2;
    // Zeros of H_n lie inside |z| < sqrt(2n + 1) and are at least about
    // pi / sqrt(2n + 1) apart, so a scan at an eighth of that spacing
    // brackets each positive zero exactly once.
    let edge = (2.0 * nf + 1.0).sqrt();
    let step = std::f64::consts::PI / edge / 8.0;
    let value = |z: f64| hermite_function_pair(z, n, PIM4).0;
    let mut positive = Vec::with_capacity(half);
    let mut lo = if n % 2 == 1 { step / 2.0 } else { 0.0 };
    let mut f_lo = value(lo);
    while lo < edge + step && positive.len() < half {
        let hi = lo + step;
        let f_hi = value(hi);
        if f_lo == 0.0 {
            positive.push(lo);
        } else if f_lo.signum() != f_hi.signum() {
            positive.push(refine_zero(&value, lo, hi, f_lo, n, PIM4));
        }
        lo = hi;
        f_lo = f_hi;
    }
    if positive.len() != half {
        return Err(Error::NumericFailure(format!(
            "located {} of {half} positive Hermite zeros at order {order}",
            positive.len()
        )));
    }

    let weight = |z: f64| {
        let (_, p2) = hermite_function_pair(z, n, PIM4);
        let pp = (2.0 * nf).sqrt() * p2;
        2.0 / (pp * pp)
    };
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for &z in positive.iter().rev() {
        x.push(z);
        w.push(weight(z));
    }
    if n % 2 == 1 {
        x.push(0.0);
        w.push(weight(0.0));
    }
    for &z in &positive {
        x.push(-z);
        w.push(weight(z));
    }

    // physicists' (weight e^{-x^2}) -> probabilists' (standard normal)
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Bisection inside a sign-change bracket followed by Newton polishing.
fn refine_zero<F: Fn(f64) -> f64>(value: &F, mut lo: f64, mut hi: f64, f_lo: f64, n: usize, h0: f64) -> f64 {
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if value(mid).signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (p1, p2) = hermite_function_pair(z, n, h0);
        let dz = p1 / ((2.0 * n as f64).sqrt() * p2);
        if !dz.is_finite() {
            break;
        }
        let next = z - dz;
        if next <= lo || next >= hi {
            break;
        }
        z = next;
    }
    z
}

/// Returns `(h_n(z), h_{n-1}(z))` for the orthonormal Hermite functions.
fn hermite_function_pair(z: f64, n: usize, h0: f64) -> (f64, f64) {
    let mut p1 = h0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Shared default rule of order [`DEFAULT_ORDER`].
pub fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite_rule(DEFAULT_ORDER).expect("default order is valid"))
}

/// `Σ weightᵢ · f(nodeᵢ)`; fails on the first node where `f` is not finite.
pub fn expect_gauss<F: Fn(f64) -> f64>(f: F, rule: &QuadratureRule) -> Result<f64> {
    let mut acc = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(z);
        if !v.is_finite() {
            return Err(Error::NumericFailure(format!(
                "integrand is {v} at quadrature node z = {z}"
            )));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// `ψ(γ) = E_G tanh(γ + √γ G)`.
pub fn psi(gamma: f64, rule: &QuadratureRule) -> Result<f64> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(invalid(format!("psi needs a finite gamma >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let s = gamma.sqrt();
    Ok(rule.sum(|z| (gamma + s * z).tanh()))
}

/// `log(2 cosh x)` without overflow.
#[inline]
pub fn log_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one random stream: a master seed plus a stream id.
///
/// Streams are ChaCha20 keyed by the master seed with the stream id as the
/// nonce, so distinct ids never overlap and the same pair always reproduces
/// the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for a sub-task identified by `tag`.
    pub fn derive(&self, tag: u64) -> SeedSpec {
        SeedSpec {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5EED))),
        }
    }
}
