//! Approximate message passing for the Rademacher spiked Wigner model.
//!
//! The iterate form is `v^{t+1} = Y f(v^t) − b_t f(v^{t−1})` with
//! `f(v) = tanh(λ v)` entrywise and the Onsager coefficient
//! `b_t = (1/n) Σᵢ f′(v^t_i) = λ (1 − ‖f(v^t)‖² / n)`. In message variables
//! `m^t = f(v^t)` this is the TAP-corrected update
//! `m^{t+1} = tanh(λ Y m^t − λ b_t m^{t−1})`.
//!
//! The uncorrected update `v^{t+1} = Y f(v^t)` and plain power iteration are
//! kept as baselines.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::models::{overlap, DenseInstance};
use crate::numerics::SeedSpec;

const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub v_current: Vec<f64>,
    pub v_previous: Vec<f64>,
    pub t: usize,
    pub lambda: f64,
}

impl AmpState {
    /// `v^0 = init`, `v^{-1} = 0`.
    pub fn new(init: Vec<f64>, lambda: f64) -> Self {
        let n = init.len();
        Self {
            v_current: init,
            v_previous: vec![0.0; n],
            t: 0,
            lambda,
        }
    }

    pub fn zeros(n: usize, lambda: f64) -> Self {
        Self::new(vec![0.0; n], lambda)
    }

    /// `f(v^t) = tanh(λ v^t)`.
    pub fn messages(&self) -> Vec<f64> {
        denoise(&self.v_current, self.lambda)
    }
}

fn denoise(v: &[f64], lambda: f64) -> Vec<f64> {
    v.iter().map(|x| (lambda * x).tanh()).collect()
}

/// `λ (1 − ‖m‖² / n)` summed in index order.
pub fn onsager_coefficient(messages: &[f64], lambda: f64) -> f64 {
    let sq: f64 = messages.iter().map(|m| m * m).sum();
    lambda * (1.0 - sq / messages.len() as f64)
}

fn check_compatible(state: &AmpState, instance: &DenseInstance) -> Result<()> {
    if state.v_current.len() != instance.n || state.v_previous.len() != instance.n {
        return Err(invalid(format!(
            "AMP state has dimension {} but the instance has n = {}",
            state.v_current.len(),
            instance.n
        )));
    }
    if state.lambda != instance.lambda {
        return Err(invalid(format!(
            "AMP state uses lambda = {} but the instance has lambda = {}",
            state.lambda, instance.lambda
        )));
    }
    Ok(())
}

fn advance(state: &AmpState, instance: &DenseInstance, onsager: bool) -> Result<(AmpState, f64)> {
    check_compatible(state, instance)?;
    let lambda = state.lambda;
    let m = denoise(&state.v_current, lambda);
    let mut next = instance.observation.matvec(&m);
    let b = onsager_coefficient(&m, lambda);
    if onsager {
        for (v, &p) in next.iter_mut().zip(&state.v_previous) {
            *v -= b * (lambda * p).tanh();
        }
    }
    if let Some(i) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(format!(
            "non-finite AMP iterate at index {i}, iteration {}",
            state.t + 1
        )));
    }
    Ok((
        AmpState {
            v_previous: state.v_current.clone(),
            v_current: next,
            t: state.t + 1,
            lambda,
        },
        b,
    ))
}

/// One AMP iteration with the Onsager correction.
pub fn amp_step(state: &AmpState, instance: &DenseInstance) -> Result<AmpState> {
    advance(state, instance, true).map(|(s, _)| s)
}

/// One iteration of `v^{t+1} = Y f(v^t)`, i.e. `m ← tanh(λ Y m)`.
pub fn amp_step_no_onsager(state: &AmpState, instance: &DenseInstance) -> Result<AmpState> {
    advance(state, instance, false).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions {
    pub init_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub onsager: bool,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            init_scale: 1e-3,
            max_iters: 500,
            tol: 1e-7,
            onsager: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpTraceRow {
    pub t: usize,
    pub overlap: f64,
    pub iterate_rms_change: f64,
    pub b_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpResult {
    pub estimate_soft: Vec<f64>,
    pub estimate_hard: Vec<i8>,
    pub overlap_trajectory: Vec<f64>,
    pub trace: Vec<AmpTraceRow>,
    pub iterations: usize,
    pub converged: bool,
}

impl AmpResult {
    pub fn final_overlap(&self) -> f64 {
        self.overlap_trajectory.last().copied().unwrap_or(0.0)
    }
}

/// `sign(x)` with `sign(0) = +1`.
pub fn hard_round(v: &[f64]) -> Vec<i8> {
    v.iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect()
}

/// Runs AMP from `v^0 ~ N(0, init_scale²)` until the RMS change of the
/// iterate drops below `tol` (checked from the second step on) or
/// `max_iters` is reached. `opts.onsager = false` runs the uncorrected
/// baseline instead.
pub fn amp_run(instance: &DenseInstance, opts: &AmpOptions, seed: SeedSpec) -> Result<AmpResult> {
    if opts.max_iters < 2 {
        return Err(invalid("amp_run needs max_iters >= 2"));
    }
    if !(opts.init_scale >= 0.0) || !(opts.tol > 0.0) {
        return Err(invalid("init_scale must be >= 0 and tol > 0"));
    }
    let n = instance.n;
    let mut rng = seed.rng();
    let init: Vec<f64> = (0..n)
        .map(|_| opts.init_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut state = AmpState::new(init, instance.lambda);
    let sqrt_n = (n as f64).sqrt();
    let mut trace = Vec::new();
    let mut converged = false;

    while state.t < opts.max_iters {
        let (next, b_t) = advance(&state, instance, opts.onsager)?;
        if let Some(i) = next.v_current.iter().position(|v| v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::NumericFailure(format!(
                "AMP diverged at iteration {} (|v[{i}]| > {DIVERGENCE_BOUND:e})",
                next.t
            )));
        }
        let change = next
            .v_current
            .iter()
            .zip(&state.v_current)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / sqrt_n;
        let ov = overlap(&next.messages(), &instance.truth)?;
        trace.push(AmpTraceRow {
            t: next.t,
            overlap: ov,
            iterate_rms_change: change,
            b_t,
        });
        state = next;
        if state.t >= 2 && change < opts.tol {
            converged = true;
            break;
        }
    }

    let estimate_soft = state.messages();
    Ok(AmpResult {
        estimate_hard: hard_round(&estimate_soft),
        estimate_soft,
        overlap_trajectory: trace.iter().map(|r| r.overlap).collect(),
        trace,
        iterations: state.t,
        converged,
    })
}

/// Leading-eigenvector estimate by `iters` rounds of `x ← Y x / ‖Y x‖` from
/// a Gaussian start.
pub fn power_iteration(instance: &DenseInstance, iters: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(invalid("power iteration needs at least one step"));
    }
    let mut rng = seed.rng();
    let mut x: Vec<f64> = (0..instance.n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    for step in 0..iters {
        let y = instance.observation.matvec(&x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NumericFailure(format!(
                "power iteration hit a zero or non-finite vector at step {step}"
            )));
        }
        x = y.into_iter().map(|v| v / norm).collect();
    }
    Ok(x)
}
