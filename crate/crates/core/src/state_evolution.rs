//! Scalar state evolution for AMP on the Rademacher spiked Wigner model.
//!
//! The iterate `v^t` is modelled as `μ_t x + σ_t g`. With the Bayes-optimal
//! denoiser `f(v) = tanh(λ v)` only the ratio `γ = (μ/σ)²` matters and it
//! follows `γ_{t+1} = λ² ψ(γ_t)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::{default_rule, psi};

pub const DEFAULT_GAMMA0: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeTrajectory {
    pub lambda: f64,
    pub gammas: Vec<f64>,
    pub converged: bool,
    pub fixed_point: f64,
}

impl SeTrajectory {
    pub fn iterations(&self) -> usize {
        self.gammas.len() - 1
    }
}

/// Large-n law of the AMP output, `v^∞ = μ_∞ x + σ_∞ g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SePrediction {
    pub lambda: f64,
    pub gamma_inf: f64,
    pub mu_inf: f64,
    pub sigma_inf: f64,
    /// Predicted overlap `|⟨x, tanh(λ v^∞)⟩| / n = γ_∞ / λ²`.
    pub q_star: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// One step `γ ↦ λ² ψ(γ)`.
pub fn se_step(gamma: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * lambda * psi(gamma, default_rule())?)
}

/// Iterates [`se_step`] from `gamma0` until successive values differ by less
/// than `tol`. Values below `10·tol` are reported as exactly zero.
///
/// When `max_iters` runs out (critical slowing down near `λ = 1`) the
/// trajectory is returned with `converged = false` and the limit is located
/// directly: the map is increasing, so the iteration tends monotonically to
/// the nearest fixed point in its direction of travel, which is bracketed
/// and bisected.
pub fn se_fixed_point(lambda: f64, gamma0: f64, tol: f64, max_iters: usize) -> Result<SeTrajectory> {
    check_lambda(lambda)?;
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(invalid(format!("gamma0 must be positive, got {gamma0}")));
    }
    if !(tol > 0.0) || max_iters == 0 {
        return Err(invalid("tol and max_iters must be positive"));
    }
    let mut gammas = Vec::with_capacity(64);
    gammas.push(gamma0);
    let mut current = gamma0;
    let mut converged = false;
    for _ in 0..max_iters {
        let next = se_step(current, lambda)?;
        gammas.push(next);
        let step = (next - current).abs();
        current = next;
        if step < tol {
            converged = true;
            break;
        }
    }
    let limit = if converged {
        current
    } else {
        let prev = gammas[gammas.len() - 2];
        monotone_limit(lambda, current, current < prev, 10.0 * tol)?
    };
    let fixed_point = if limit < 10.0 * tol { 0.0 } else { limit };
    Ok(SeTrajectory {
        lambda,
        gammas,
        converged,
        fixed_point,
    })
}

fn monotone_limit(lambda: f64, from: f64, decreasing: bool, floor: f64) -> Result<f64> {
    let h = |g: f64| -> Result<f64> { Ok(se_step(g, lambda)? - g) };
    let ceiling = lambda * lambda;
    let mut prev = from;
    loop {
        let probe = if decreasing { prev * 0.8 } else { (prev * 1.25).min(ceiling) };
        if decreasing && probe < floor {
            return Ok(0.0);
        }
        let hp = h(probe)?;
        let crossed = if decreasing { hp >= 0.0 } else { hp <= 0.0 };
        if crossed {
            let (mut lo, mut hi) = if decreasing { (probe, prev) } else { (prev, probe) };
            let h_lo = h(lo)?;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (h(mid)? > 0.0) == (h_lo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        if !decreasing && probe >= ceiling {
            return Ok(ceiling);
        }
        prev = probe;
    }
}

/// Runs [`se_fixed_point`] with the default start, tolerance and iteration
/// cap, then maps `γ_∞` to the output law.
pub fn se_predict(lambda: f64) -> Result<SePrediction> {
    let traj = se_fixed_point(lambda, DEFAULT_GAMMA0, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    Ok(prediction_from(&traj))
}

pub fn prediction_from(traj: &SeTrajectory) -> SePrediction {
    let lambda = traj.lambda;
    let g = traj.fixed_point;
    SePrediction {
        lambda,
        gamma_inf: g,
        mu_inf: g / lambda,
        sigma_inf: g.sqrt() / lambda,
        q_star: g / (lambda * lambda),
        iterations: traj.iterations(),
        converged: traj.converged,
    }
}

/// Whether AMP started near zero leaves the trivial fixed point.
pub fn se_escapes(lambda: f64) -> Result<bool> {
    Ok(se_predict(lambda)?.gamma_inf > 0.0)
}

/// Predictions over a grid of `λ`, in grid order.
pub fn se_sweep(lambdas: &[f64]) -> Result<Vec<SePrediction>> {
    lambdas.par_iter().map(|&l| se_predict(l)).collect()
}

/// Iterates the two-parameter recurrence
/// `μ_{t+1} = λ E f(μ_t + σ_t G)`, `σ²_{t+1} = E f(μ_t + σ_t G)²` with
/// `f = tanh(λ ·)`, started on the Nishimori line `μ₀ = γ₀/λ`,
/// `σ₀² = γ₀/λ²`. Returns `(μ_t, σ_t)` for `t = 0..=steps`.
///
/// The variance has no leading `λ`; the reduction to `γ` only closes
/// without it.
pub fn se_two_parameter(lambda: f64, gamma0: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    check_lambda(lambda)?;
    let rule = default_rule();
    let mut out = Vec::with_capacity(steps + 1);
    let mut mu = gamma0 / lambda;
    let mut sigma = gamma0.sqrt() / lambda;
    out.push((mu, sigma));
    for _ in 0..steps {
        let m1 = rule.sum(|z| (lambda * (mu + sigma * z)).tanh());
        let m2 = rule.sum(|z| (lambda * (mu + sigma * z)).tanh().powi(2));
        mu = lambda * m1;
        sigma = m2.sqrt();
        out.push((mu, sigma));
    }
    Ok(out)
}
