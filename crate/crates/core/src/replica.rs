//! Replica-symmetric free energy for the Rademacher spiked Wigner model.
//!
//! On the Nishimori line the saddle is described by an overlap `q` and its
//! conjugate `μ`, and the free energy density is
//!
//! ```text
//! f(q, μ) = (1/λ) [ −(λ²/4)(q² + 1) + (μ/2)(q + 1) − E_z log 2cosh(μ + √μ z) ]
//! ```
//!
//! Eliminating `μ = λ²q` gives the one-dimensional landscape `F(q)`, whose
//! critical points are the solutions of `q = ψ(λ²q)` and whose derivative is
//! `F′(q) = (λ/2)(q − ψ(λ²q))`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{default_rule, expect_gauss, log_2cosh, psi};
use crate::state_evolution::se_escapes;

pub const SCAN_POINTS: usize = 1024;
pub const ROOT_TOL: f64 = 1e-12;
pub const MIN_GRID: usize = 64;
pub const DEFAULT_GRID: usize = 512;
/// Upper end of the landscape grid; `q = 1` itself is excluded.
pub const Q_MAX: f64 = 1.0 - 1e-6;
pub const FD_STEP: f64 = 1e-5;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Free energy density at the replica-symmetric point `(q, μ)`.
pub fn rs_free_energy(q: f64, mu: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mu must be nonnegative, got {mu}")));
    }
    if !q.is_finite() {
        return Err(invalid(format!("q must be finite, got {q}")));
    }
    let entropic = if mu == 0.0 {
        std::f64::consts::LN_2
    } else {
        let s = mu.sqrt();
        expect_gauss(|z| log_2cosh(mu + s * z), default_rule())?
    };
    Ok(-(lambda / 4.0) * (q * q + 1.0) + mu * (q + 1.0) / (2.0 * lambda) - entropic / lambda)
}

/// `F(q) = f(q, λ²q)`.
pub fn landscape_value(q: f64, lambda: f64) -> Result<f64> {
    if q < 0.0 {
        return Err(invalid(format!("q must be nonnegative, got {q}")));
    }
    rs_free_energy(q, lambda * lambda * q, lambda)
}

/// Exact derivative `F′(q) = (λ/2)(q − ψ(λ²q))`.
pub fn landscape_slope(q: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(0.5 * lambda * (q - psi(lambda * lambda * q, default_rule())?))
}

/// Finite-difference `F′(q)` with step `h`: central where `q − h ≥ 0`,
/// otherwise the second-order forward formula.
pub fn landscape_slope_fd(q: f64, lambda: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    if q - h >= 0.0 {
        Ok((landscape_value(q + h, lambda)? - landscape_value(q - h, lambda)?) / (2.0 * h))
    } else {
        let f0 = landscape_value(q, lambda)?;
        let f1 = landscape_value(q + h, lambda)?;
        let f2 = landscape_value(q + 2.0 * h, lambda)?;
        Ok((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
    }
}

/// A solution of the replica-symmetric saddle equations. The Nishimori
/// identifications `c = q`, `ν = μ` hold by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QMuSolution {
    pub q: f64,
    pub mu: f64,
    pub c: f64,
    pub nu: f64,
    pub free_energy: f64,
}

impl QMuSolution {
    fn at(q: f64, lambda: f64) -> Result<Self> {
        let mu = lambda * lambda * q;
        Ok(Self {
            q,
            mu,
            c: q,
            nu: mu,
            free_energy: rs_free_energy(q, mu, lambda)?,
        })
    }

    /// `|q − E tanh(μ + √μ z)|`.
    pub fn residual(&self) -> Result<f64> {
        Ok((self.q - psi(self.mu, default_rule())?).abs())
    }
}

/// All solutions of `q = ψ(λ²q)` on `[0, 1]`, in increasing `q`. `q = 0` is
/// always first. Roots are found by a sign-change scan of `q − ψ(λ²q)` on a
/// uniform grid and refined by bisection.
pub fn solve_q_mu(lambda: f64) -> Result<Vec<QMuSolution>> {
    check_lambda(lambda)?;
    let l2 = lambda * lambda;
    let h = |q: f64| -> Result<f64> { Ok(q - psi(l2 * q, default_rule())?) };
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid[1..]
        .par_iter()
        .map(|&q| h(q))
        .collect::<Result<_>>()?;

    let mut roots = vec![0.0];
    // h(0) = 0 exactly; just above zero h has the sign of 1 − λ²
    let mut prev_q = 0.0;
    let mut prev_sign = if l2 > 1.0 { -1.0 } else { 1.0 };
    for (&q, &v) in grid[1..].iter().zip(&values) {
        if v == 0.0 {
            roots.push(q);
            prev_sign = 0.0;
        } else {
            let sign = v.signum();
            if prev_sign != 0.0 && sign != prev_sign {
                roots.push(bisect(&h, prev_q, q, prev_sign)?);
            }
            prev_sign = sign;
        }
        prev_q = q;
    }
    roots.into_iter().map(|q| QMuSolution::at(q, lambda)).collect()
}

fn bisect<F: Fn(f64) -> Result<f64>>(h: &F, mut lo: f64, mut hi: f64, lo_sign: f64) -> Result<f64> {
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    /// `q = 0` is the only local minimum.
    ImpossibleA,
    /// `q = 0` is the global minimum but another local minimum exists.
    ImpossibleB,
    /// The global minimum is informative but AMP stays at `q = 0`.
    Hard,
    /// The global minimum is informative and AMP reaches it.
    Easy,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ImpossibleA => "IMPOSSIBLE_A",
            Phase::ImpossibleB => "IMPOSSIBLE_B",
            Phase::Hard => "HARD",
            Phase::Easy => "EASY",
        }
    }

    pub fn is_informative(self) -> bool {
        matches!(self, Phase::Hard | Phase::Easy)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minimum {
    pub q: f64,
    pub free_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeCurve {
    pub lambda: f64,
    pub grid: Vec<(f64, f64)>,
    pub minima: Vec<Minimum>,
    pub global_min_q: f64,
    /// Set when two minima share the lowest value; the smaller `q` is kept.
    pub global_tie: bool,
    pub phase: Phase,
}

impl LandscapeCurve {
    /// Builds a curve from given samples without refinement, e.g. for
    /// landscapes that do not come from [`rs_free_energy`].
    pub fn from_samples(lambda: f64, grid: Vec<(f64, f64)>, se_escapes: bool) -> Result<Self> {
        check_grid(&grid)?;
        let minima = grid_minima(&grid)
            .into_iter()
            .map(|i| Minimum {
                q: grid[i].0,
                free_energy: grid[i].1,
            })
            .collect();
        Self::assemble(lambda, grid, minima, se_escapes)
    }

    fn assemble(lambda: f64, grid: Vec<(f64, f64)>, minima: Vec<Minimum>, se_escapes: bool) -> Result<Self> {
        let (global_min_q, global_tie) = global_minimum(&minima)?;
        let mut curve = Self {
            lambda,
            grid,
            minima,
            global_min_q,
            global_tie,
            phase: Phase::ImpossibleA,
        };
        curve.phase = classify_phase(&curve, se_escapes)?;
        Ok(curve)
    }

    pub fn minima_q(&self) -> Vec<f64> {
        self.minima.iter().map(|m| m.q).collect()
    }
}

fn check_grid(grid: &[(f64, f64)]) -> Result<()> {
    if grid.len() < 2 {
        return Err(invalid("a landscape needs at least two grid points"));
    }
    if grid.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid("landscape q values must be strictly increasing"));
    }
    if grid.iter().any(|(q, f)| !q.is_finite() || !f.is_finite()) {
        return Err(Error::NumericFailure("non-finite landscape sample".into()));
    }
    Ok(())
}

/// Indices of discrete local minima. A point must be strictly below its left
/// neighbour and no higher than its right one, so a flat run reports its
/// leftmost point.
fn grid_minima(grid: &[(f64, f64)]) -> Vec<usize> {
    let last = grid.len() - 1;
    (0..=last)
        .filter(|&i| {
            let f = grid[i].1;
            let left_ok = i == 0 || f < grid[i - 1].1;
            let right_ok = i == last || f <= grid[i + 1].1;
            left_ok && right_ok
        })
        .collect()
}

fn global_minimum(minima: &[Minimum]) -> Result<(f64, bool)> {
    let best = minima
        .iter()
        .map(|m| m.free_energy)
        .fold(f64::INFINITY, f64::min);
    let mut at_best = minima.iter().filter(|m| m.free_energy == best);
    let first = at_best
        .next()
        .ok_or_else(|| Error::InvariantViolation("landscape has no minimum".into()))?;
    Ok((first.q, at_best.next().is_some()))
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn golden_section<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Samples `F(q)` on `grid_size` uniform points of `[0, 1 − 10⁻⁶]`, locates
/// local minima, refines interior ones by golden-section search and labels
/// the phase using the state-evolution escape test.
pub fn landscape(lambda: f64, grid_size: usize) -> Result<LandscapeCurve> {
    check_lambda(lambda)?;
    if grid_size < MIN_GRID {
        return Err(invalid(format!(
            "grid_size must be at least {MIN_GRID}, got {grid_size}"
        )));
    }
    let step = Q_MAX / (grid_size - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..grid_size)
        .into_par_iter()
        .map(|i| {
            let q = if i + 1 == grid_size { Q_MAX } else { i as f64 * step };
            landscape_value(q, lambda).map(|f| (q, f))
        })
        .collect::<Result<_>>()?;
    check_grid(&grid)?;
    let last = grid.len() - 1;
    let minima = grid_minima(&grid)
        .into_iter()
        .map(|i| {
            if i == 0 || i == last {
                return Ok(Minimum {
                    q: grid[i].0,
                    free_energy: grid[i].1,
                });
            }
            let q = golden_section(
                |q| landscape_value(q, lambda),
                grid[i - 1].0,
                grid[i + 1].0,
                1e-12,
            )?;
            Ok(Minimum {
                q,
                free_energy: landscape_value(q, lambda)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LandscapeCurve::assemble(lambda, grid, minima, se_escapes(lambda)?)
}

/// Labels a landscape. Fails when the state evolution escapes although
/// `q = 0` is the only minimum, since AMP would then have nowhere to go.
pub fn classify_phase(curve: &LandscapeCurve, se_escapes: bool) -> Result<Phase> {
    if curve.minima.is_empty() {
        return Err(Error::InvariantViolation("landscape has no minimum".into()));
    }
    if curve.global_min_q == 0.0 {
        if curve.minima.len() == 1 {
            if se_escapes {
                return Err(Error::InvariantViolation(format!(
                    "state evolution escapes at lambda = {} but q = 0 is the only minimum",
                    curve.lambda
                )));
            }
            Ok(Phase::ImpossibleA)
        } else {
            Ok(Phase::ImpossibleB)
        }
    } else if se_escapes {
        Ok(Phase::Easy)
    } else {
        Ok(Phase::Hard)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub lambda: f64,
    pub minima: Vec<f64>,
    pub global_min_q: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thresholds {
    pub lambda_stat: Option<f64>,
    pub lambda_comp: Option<f64>,
    pub rows: Vec<PhaseRow>,
}

/// First grid `λ` with an informative global minimum, and first with phase
/// `EASY`.
pub fn thresholds_from_phases(rows: &[(f64, Phase)]) -> (Option<f64>, Option<f64>) {
    let stat = rows.iter().find(|(_, p)| p.is_informative()).map(|r| r.0);
    let comp = rows.iter().find(|(_, p)| *p == Phase::Easy).map(|r| r.0);
    (stat, comp)
}

/// Classifies every `λ` of an increasing grid and reports both thresholds.
pub fn thresholds(lambda_grid: &[f64], grid_size: usize) -> Result<Thresholds> {
    if lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("lambda grid must be strictly increasing"));
    }
    let rows: Vec<PhaseRow> = lambda_grid
        .par_iter()
        .map(|&l| {
            let c = landscape(l, grid_size)?;
            Ok(PhaseRow {
                lambda: l,
                minima: c.minima_q(),
                global_min_q: c.global_min_q,
                phase: c.phase,
            })
        })
        .collect::<Result<_>>()?;
    let labels: Vec<(f64, Phase)> = rows.iter().map(|r| (r.lambda, r.phase)).collect();
    let (lambda_stat, lambda_comp) = thresholds_from_phases(&labels);
    Ok(Thresholds {
        lambda_stat,
        lambda_comp,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedSpec;
    use crate::state_evolution::{se_fixed_point, DEFAULT_GAMMA0};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn boundary_value_is_exact() {
        for l in [0.3, 1.0, 1.7, 2.9] {
            let want = -l / 4.0 - std::f64::consts::LN_2 / l;
            assert_eq!(rs_free_energy(0.0, 0.0, l).unwrap(), want);
            assert_eq!(landscape_value(0.0, l).unwrap(), want);
        }
        assert!(rs_free_energy(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let (lambda, q, mu) = (3.0_f64, 1.0, 9.0_f64);
        let mut rng = SeedSpec::new(99, 0).rng();
        let n = 10_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = log_2cosh(mu + mu.sqrt() * z);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let mc = (-(lambda * lambda / 4.0) * (q * q + 1.0) + 0.5 * mu * (q + 1.0) - mean) / lambda;
        let got = rs_free_energy(q, mu, lambda).unwrap();
        assert!((got - mc).abs() < 3.0 * se / lambda, "{got} vs {mc}");
    }

    #[test]
    fn analytic_slope_matches_differences() {
        for l in [0.6, 1.4, 2.5] {
            for q in [0.05, 0.3, 0.7, 0.95] {
                let a = landscape_slope(q, l).unwrap();
                let d = landscape_slope_fd(q, l, 1e-5).unwrap();
                // the two sides agree only up to the quadrature error of the
                // Gaussian integration by parts linking them
                assert!((a - d).abs() < 1e-6, "lambda {l} q {q}: {a} vs {d}");
            }
        }
    }

    #[test]
    fn below_threshold_only_trivial_solution() {
        let s = solve_q_mu(0.5).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].q, 0.0);
    }

    #[test]
    fn solutions_match_state_evolution() {
        let s = solve_q_mu(2.0).unwrap();
        assert_eq!(s.len(), 2);
        let traj = se_fixed_point(2.0, DEFAULT_GAMMA0, 1e-14, 100_000).unwrap();
        assert!((4.0 * s[1].q - traj.fixed_point).abs() < 1e-8);
        for sol in &s {
            assert_eq!(sol.mu, 4.0 * sol.q);
            assert_eq!((sol.c, sol.nu), (sol.q, sol.mu));
            assert!(sol.residual().unwrap() < 1e-10);
        }
    }

    #[test]
    fn informative_saddle_wins_above_threshold() {
        let s = solve_q_mu(1.5).unwrap();
        assert!(s.len() >= 2);
        assert!(s[1].free_energy <= s[0].free_energy);
    }

    #[test]
    fn tiny_root_just_above_threshold_is_found() {
        let l: f64 = 1.0002;
        let s = solve_q_mu(l).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[1].q > 0.0 && s[1].q < 1.0 / 1023.0);
        assert!(s[1].residual().unwrap() < 1e-10);
    }

    #[test]
    fn landscape_examples() {
        let c = landscape(0.5, 256).unwrap();
        assert_eq!(c.minima_q(), vec![0.0]);
        assert_eq!(c.phase, Phase::ImpossibleA);

        let c = landscape(1.5, 256).unwrap();
        assert!(!c.minima_q().contains(&0.0));
        assert!(c.global_min_q > 0.0);
        assert_eq!(c.phase, Phase::Easy);
        for m in &c.minima {
            assert!(landscape_slope_fd(m.q, 1.5, FD_STEP).unwrap().abs() < 1e-5);
        }
        assert!(landscape(1.5, 63).is_err());
    }

    fn samples(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..101).map(|i| i as f64 / 100.0).map(|q| (q, f(q))).collect()
    }

    #[test]
    fn synthetic_phases() {
        let rising = LandscapeCurve::from_samples(1.0, samples(|q| q), false).unwrap();
        assert_eq!(rising.phase, Phase::ImpossibleA);
        assert!(LandscapeCurve::from_samples(1.0, samples(|q| q), true).is_err());

        // wells at 0 and 0.7; the linear tilt picks the winner
        let well = |tilt: f64| move |q: f64| q * q * (q - 0.7).powi(2) + tilt * q;
        let b = LandscapeCurve::from_samples(1.0, samples(well(0.01)), false).unwrap();
        assert_eq!(b.phase, Phase::ImpossibleB);
        assert_eq!(b.minima.len(), 2);
        let c = LandscapeCurve::from_samples(1.0, samples(well(-0.01)), false).unwrap();
        assert_eq!(c.phase, Phase::Hard);
        let d = LandscapeCurve::from_samples(1.0, samples(well(-0.01)), true).unwrap();
        assert_eq!(d.phase, Phase::Easy);
    }

    #[test]
    fn plateau_resolves_left() {
        let grid = vec![(0.0, 1.0), (0.1, 0.5), (0.2, 0.5), (0.3, 0.5), (0.4, 2.0)];
        let c = LandscapeCurve::from_samples(1.0, grid, true).unwrap();
        assert_eq!(c.minima_q(), vec![0.1]);
        assert!(LandscapeCurve::from_samples(1.0, vec![(0.0, 1.0), (0.0, 2.0)], false).is_err());
    }

    #[test]
    fn threshold_bookkeeping() {
        use Phase::*;
        let rows = [(0.5, ImpossibleA), (0.8, ImpossibleB), (0.9, Hard), (1.1, Easy)];
        let (s, c) = thresholds_from_phases(&rows);
        assert_eq!((s, c), (Some(0.9), Some(1.1)));
        let (s, c) = thresholds_from_phases(&rows[..2]);
        assert_eq!((s, c), (None, None));
        let t = thresholds(&[0.3, 0.6, 0.9], MIN_GRID).unwrap();
        assert_eq!((t.lambda_stat, t.lambda_comp), (None, None));
    }

    #[test]
    fn phase_labels_serialize_upper_snake() {
        assert_eq!(serde_json::to_string(&Phase::ImpossibleB).unwrap(), "\"IMPOSSIBLE_B\"");
    }
}
