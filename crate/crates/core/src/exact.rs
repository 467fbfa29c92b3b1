//! Brute-force enumeration over `{±1}ⁿ` for small `n`.
//!
//! This is the ground-truth oracle for the message-passing code: exact log
//! partition function, marginals, pairwise means and gauge-fixed marginals
//! (conditioned on `σ₀ = +1`, since the planted models are invariant under a
//! global flip and their raw marginals vanish).

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{DenseInstance, GwTree, SbmInstance};
use crate::numerics::SeedSpec;

pub const MAX_SPINS: usize = 24;
pub const MAX_SPINS_VARIATIONAL: usize = 12;
const BLOCK_BITS: usize = 12;

/// Energy function on spin configurations.
pub trait Hamiltonian: Sync {
    fn energy(&self, spins: &[i8]) -> f64;
}

impl<F> Hamiltonian for F
where
    F: Fn(&[i8]) -> f64 + Sync,
{
    fn energy(&self, spins: &[i8]) -> f64 {
        self(spins)
    }
}

/// One pairwise term: energy `aligned` when `σᵢσⱼ = +1`, `anti` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub aligned: f64,
    pub anti: f64,
}

impl PairTerm {
    /// Ising coupling `−J σᵢ σⱼ`.
    pub fn ising(i: usize, j: usize, coupling: f64) -> Self {
        Self {
            i,
            j,
            aligned: -coupling,
            anti: coupling,
        }
    }
}

/// `H(σ) = Σ pair terms − Σᵢ hᵢ σᵢ`. Pair energies may be `+∞` to forbid a
/// configuration outright.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseHamiltonian {
    pub n: usize,
    pub pairs: Vec<PairTerm>,
    pub fields: Vec<f64>,
}

impl Hamiltonian for PairwiseHamiltonian {
    fn energy(&self, s: &[i8]) -> f64 {
        let mut e = 0.0;
        for p in &self.pairs {
            e += if s[p.i] == s[p.j] { p.aligned } else { p.anti };
        }
        for (h, &si) in self.fields.iter().zip(s) {
            e -= h * f64::from(si);
        }
        e
    }
}

impl PairwiseHamiltonian {
    /// Posterior of the spiked Wigner model at `β = 1`:
    /// `−Σ_{i<j} λ Y_ij σᵢ σⱼ` (the Nishimori temperature folded into the
    /// couplings).
    pub fn spiked_wigner_posterior(inst: &DenseInstance) -> Self {
        let n = inst.n;
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push(PairTerm::ising(i, j, inst.lambda * inst.observation.get(i, j)));
            }
        }
        Self {
            n,
            pairs,
            fields: vec![0.0; n],
        }
    }

    /// Exact block model posterior at `β = 1`: every pair contributes the
    /// log-likelihood of its edge or non-edge status.
    pub fn sbm_posterior(inst: &SbmInstance) -> Self {
        let n = inst.n;
        let nf = n as f64;
        let (p_in, p_out) = (inst.a / nf, inst.b / nf);
        let mut adjacent = vec![false; n * n];
        for &(u, v) in &inst.edges {
            adjacent[u * n + v] = true;
        }
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let (same, other) = if adjacent[i * n + j] {
                    (p_in, p_out)
                } else {
                    (1.0 - p_in, 1.0 - p_out)
                };
                pairs.push(PairTerm {
                    i,
                    j,
                    aligned: -same.ln(),
                    anti: -other.ln(),
                });
            }
        }
        Self {
            n,
            pairs,
            fields: vec![0.0; n],
        }
    }

    /// Ising model on the observed edges only, with `tanh(J) = θ`. This is
    /// the model that edge-only belief propagation solves.
    pub fn graph_ising(inst: &SbmInstance, theta: f64) -> Self {
        let j = theta.atanh();
        Self {
            n: inst.n,
            pairs: inst
                .edges
                .iter()
                .map(|&(u, v)| PairTerm::ising(u, v, j))
                .collect(),
            fields: vec![0.0; inst.n],
        }
    }

    /// Tree model with `tanh(J) = 1 − 2ε` on every parent link and a field
    /// `atanh(spin · leaf_value)` on every leaf, matching the upward tree
    /// recursion.
    pub fn tree_with_leaf_fields(tree: &GwTree, eps: f64, leaf_value: f64) -> Self {
        let j = (1.0 - 2.0 * eps).atanh();
        let children = tree.children();
        let n = tree.len();
        let pairs = tree
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| node.parent.map(|p| PairTerm::ising(p, i, j)))
            .collect();
        let fields = (0..n)
            .map(|i| {
                if children[i].is_empty() {
                    (f64::from(tree.nodes[i].spin) * leaf_value).atanh()
                } else {
                    0.0
                }
            })
            .collect();
        Self { n, pairs, fields }
    }
}

/// Gibbs law `∝ exp(−β H(σ))` on `n` spins.
pub struct GibbsSpec<H> {
    pub hamiltonian: H,
    pub beta: f64,
    pub n: usize,
}

impl<H: Hamiltonian> GibbsSpec<H> {
    pub fn new(hamiltonian: H, beta: f64, n: usize) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        if n == 0 {
            return Err(invalid("need at least one spin"));
        }
        Ok(Self {
            hamiltonian,
            beta,
            n,
        })
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub log_partition: f64,
    /// `E[σᵢ]`.
    pub marginals: Vec<f64>,
    /// `E[σᵢ | σ₀ = +1]`.
    pub gauge_fixed: Vec<f64>,
    /// Row-major `n × n` matrix of `E[σᵢ σⱼ]` (ones on the diagonal).
    pub pair_means: Vec<f64>,
    pub mean_energy: f64,
    /// `−Σ p log p` in nats.
    pub entropy: f64,
    /// `E H − T S`.
    pub free_energy: f64,
}

impl ExactSummary {
    pub fn pair_mean(&self, i: usize, j: usize) -> f64 {
        let n = self.marginals.len();
        self.pair_means[i * n + j]
    }
}

#[inline]
fn spins_of(state: usize, out: &mut [i8]) {
    for (i, s) in out.iter_mut().enumerate() {
        *s = if state >> i & 1 == 1 { 1 } else { -1 };
    }
}

struct BlockSums {
    shift: f64,
    z: f64,
    energy: f64,
    neg_log_weight: f64,
    mag: Vec<f64>,
    pair: Vec<f64>,
    gauge_z: f64,
    gauge_mag: Vec<f64>,
}

fn block_sums<H: Hamiltonian>(spec: &GibbsSpec<H>, start: usize, end: usize) -> BlockSums {
    let n = spec.n;
    let mut spins = vec![0i8; n];
    let log_w: Vec<f64> = (start..end)
        .map(|s| {
            spins_of(s, &mut spins);
            -spec.beta * spec.hamiltonian.energy(&spins)
        })
        .collect();
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = BlockSums {
        shift,
        z: 0.0,
        energy: 0.0,
        neg_log_weight: 0.0,
        mag: vec![0.0; n],
        pair: vec![0.0; n * n],
        gauge_z: 0.0,
        gauge_mag: vec![0.0; n],
    };
    if shift == f64::NEG_INFINITY {
        return out;
    }
    for (s, &lw) in (start..end).zip(&log_w) {
        let w = (lw - shift).exp();
        if w == 0.0 {
            continue;
        }
        spins_of(s, &mut spins);
        out.z += w;
        out.energy += w * (-lw / spec.beta);
        out.neg_log_weight += w * (lw - shift);
        for i in 0..n {
            let si = f64::from(spins[i]);
            out.mag[i] += w * si;
            for j in (i + 1)..n {
                out.pair[i * n + j] += w * si * f64::from(spins[j]);
            }
        }
        if spins[0] == 1 {
            out.gauge_z += w;
            for i in 0..n {
                out.gauge_mag[i] += w * f64::from(spins[i]);
            }
        }
    }
    out
}

/// Sums over all `2ⁿ` states in blocks evaluated in parallel, combined in
/// block order with a shared log-sum-exp shift; the result does not depend
/// on the number of threads.
pub fn enumerate_gibbs<H: Hamiltonian>(spec: &GibbsSpec<H>) -> Result<ExactSummary> {
    let n = spec.n;
    if n > MAX_SPINS {
        return Err(Error::ResourceLimit(format!(
            "exact enumeration is limited to {MAX_SPINS} spins, got {n}"
        )));
    }
    let states = 1usize << n;
    let block = 1usize << BLOCK_BITS.min(n);
    let blocks: Vec<BlockSums> = (0..states / block)
        .into_par_iter()
        .map(|b| block_sums(spec, b * block, (b + 1) * block))
        .collect();

    let shift = blocks
        .iter()
        .map(|b| b.shift)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NumericFailure(
            "every state has zero or infinite Gibbs weight".into(),
        ));
    }
    let mut z = 0.0;
    let mut energy = 0.0;
    let mut nlw = 0.0;
    let mut mag = vec![0.0; n];
    let mut pair = vec![0.0; n * n];
    let mut gauge_z = 0.0;
    let mut gauge_mag = vec![0.0; n];
    for b in &blocks {
        if b.z == 0.0 {
            continue;
        }
        let scale = (b.shift - shift).exp();
        z += scale * b.z;
        energy += scale * b.energy;
        // log weights inside a block are relative to the block shift
        nlw += scale * (b.neg_log_weight + (b.shift - shift) * b.z);
        for i in 0..n {
            mag[i] += scale * b.mag[i];
            gauge_mag[i] += scale * b.gauge_mag[i];
        }
        for (acc, v) in pair.iter_mut().zip(&b.pair) {
            *acc += scale * v;
        }
        gauge_z += scale * b.gauge_z;
    }

    let log_partition = shift + z.ln();
    let mean_energy = energy / z;
    // log p = (log w − shift) − log(z)
    let entropy = -(nlw / z - z.ln());
    let free_energy = mean_energy - entropy / spec.beta;

    let marginals: Vec<f64> = mag.iter().map(|m| m / z).collect();
    let mut pair_means = vec![0.0; n * n];
    for i in 0..n {
        pair_means[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = pair[i * n + j] / z;
            pair_means[i * n + j] = v;
            pair_means[j * n + i] = v;
        }
    }
    let gauge_fixed = if gauge_z > 0.0 {
        gauge_mag.iter().map(|m| m / gauge_z).collect()
    } else {
        vec![f64::NAN; n]
    };
    Ok(ExactSummary {
        log_partition,
        marginals,
        gauge_fixed,
        pair_means,
        mean_energy,
        entropy,
        free_energy,
    })
}

fn free_energy_of(p: &[f64], energies: &[f64], temperature: f64) -> f64 {
    let mut e = 0.0;
    let mut neg_s = 0.0;
    for (&pi, &h) in p.iter().zip(energies) {
        if pi > 0.0 {
            e += pi * h;
            neg_s += pi * pi.ln();
        }
    }
    e + temperature * neg_s
}

/// `F(p) − F(Gibbs)` for `trials` distributions obtained by multiplying the
/// Gibbs weights by a Dirichlet(`concentration`) draw and renormalizing.
pub fn gibbs_free_energy_gaps<H: Hamiltonian>(
    spec: &GibbsSpec<H>,
    trials: usize,
    concentration: f64,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    let n = spec.n;
    if n > MAX_SPINS_VARIATIONAL {
        return Err(Error::ResourceLimit(format!(
            "variational check is limited to {MAX_SPINS_VARIATIONAL} spins, got {n}"
        )));
    }
    if !(concentration > 0.0) {
        return Err(invalid("Dirichlet concentration must be positive"));
    }
    let states = 1usize << n;
    let mut spins = vec![0i8; n];
    let energies: Vec<f64> = (0..states)
        .map(|s| {
            spins_of(s, &mut spins);
            spec.hamiltonian.energy(&spins)
        })
        .collect();
    let log_w: Vec<f64> = energies.iter().map(|e| -spec.beta * e).collect();
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - shift).exp()).collect();
    let z: f64 = w.iter().sum();
    let gibbs: Vec<f64> = w.iter().map(|x| x / z).collect();
    let t = spec.temperature();
    let base = free_energy_of(&gibbs, &energies, t);

    let gamma = Gamma::new(concentration, 1.0).map_err(|e| invalid(e.to_string()))?;
    let mut rng = seed.rng();
    let mut gaps = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut q: Vec<f64> = gibbs.iter().map(|p| p * gamma.sample(&mut rng)).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        gaps.push(free_energy_of(&q, &energies, t) - base);
    }
    Ok(gaps)
}

/// True iff the Gibbs law has strictly lower `E H − T S` than each of
/// `trials` Dirichlet-jittered alternatives (concentration 100).
pub fn gibbs_minimizes_free_energy<H: Hamiltonian>(
    spec: &GibbsSpec<H>,
    trials: usize,
    seed: SeedSpec,
) -> Result<bool> {
    Ok(gibbs_free_energy_gaps(spec, trials, 100.0, seed)?
        .iter()
        .all(|&g| g > 0.0))
}

/// A planted instance accepted by [`exact_posterior_marginals`].
#[derive(Debug, Clone, Copy)]
pub enum PlantedInstance<'a> {
    Dense(&'a DenseInstance),
    Sbm(&'a SbmInstance),
}

impl<'a> From<&'a DenseInstance> for PlantedInstance<'a> {
    fn from(v: &'a DenseInstance) -> Self {
        PlantedInstance::Dense(v)
    }
}

impl<'a> From<&'a SbmInstance> for PlantedInstance<'a> {
    fn from(v: &'a SbmInstance) -> Self {
        PlantedInstance::Sbm(v)
    }
}

/// Exact posterior summary of a planted instance. The spiked Wigner
/// posterior sits on the Nishimori line (`β = λ`); the block model uses the
/// full likelihood, edges and non-edges alike.
pub fn exact_posterior_marginals<'a>(instance: impl Into<PlantedInstance<'a>>) -> Result<ExactSummary> {
    let h = match instance.into() {
        PlantedInstance::Dense(d) => PairwiseHamiltonian::spiked_wigner_posterior(d),
        PlantedInstance::Sbm(s) => PairwiseHamiltonian::sbm_posterior(s),
    };
    if h.n > MAX_SPINS {
        return Err(Error::ResourceLimit(format!(
            "exact posterior is limited to {MAX_SPINS} spins, got {}",
            h.n
        )));
    }
    let n = h.n;
    enumerate_gibbs(&GibbsSpec::new(h, 1.0, n)?)
}

/// Regression fixture for an exact posterior computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFixture {
    #[serde(rename = "instance-seed")]
    pub instance_seed: SeedSpec,
    pub params: std::collections::BTreeMap<String, f64>,
    pub gauge: String,
    pub marginals: Vec<f64>,
    #[serde(rename = "logZ")]
    pub log_z: f64,
}

impl MarginalFixture {
    pub fn from_summary(
        seed: SeedSpec,
        params: std::collections::BTreeMap<String, f64>,
        summary: &ExactSummary,
    ) -> Self {
        Self {
            instance_seed: seed,
            params,
            gauge: "sigma_0=+1".into(),
            marginals: summary.gauge_fixed.clone(),
            log_z: summary.log_partition,
        }
    }
}
