//! Belief propagation for the two-community block model.
//!
//! Messages are in expectation form, `m = P(+) − P(−)`. With an edge
//! coupling `θ₊` and a non-edge coupling `θ₋` the update is
//!
//! ```text
//! m_{u→v} = tanh( Σ_{w∼u, w≠v} atanh(θ₊ m_{w→u}) + Σ_{w≁u} atanh(θ₋ m_w) )
//! ```
//!
//! where the second sum uses vertex beliefs `m_w`. The edge-only variant
//! drops it. Alongside graph BP this module has the upward recursion on a
//! Galton–Watson tree, population dynamics for the distributional version of
//! that recursion, and the Kesten–Stigum linear stability measurement.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{overlap, poisson, GwTree, SbmInstance, SparseGraph};
use crate::numerics::SeedSpec;

/// Pairwise couplings in `tanh` form. `theta_plus` is `O(1)`,
/// `theta_minus` is `O(1/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub theta_plus: f64,
    pub theta_minus: f64,
    pub n: usize,
}

impl Couplings {
    /// Explicit couplings with `0 ≤ θ₊ < 1` and `−1 < θ₋ ≤ 0`. The zero
    /// endpoints describe the uninformative model.
    pub fn new(theta_plus: f64, theta_minus: f64, n: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&theta_plus) || !(theta_minus > -1.0 && theta_minus <= 0.0) {
            return Err(invalid(format!(
                "couplings need 0 <= theta_plus < 1 and -1 < theta_minus <= 0, \
                 got {theta_plus}, {theta_minus}"
            )));
        }
        Ok(Self {
            theta_plus,
            theta_minus,
            n,
        })
    }
}

/// Couplings from the posterior pair factors. An edge has likelihood ratio
/// `a/b` between aligned and anti-aligned endpoints, a non-edge
/// `(1 − a/n)/(1 − b/n)`; in `tanh` form these are
/// `θ₊ = (a − b)/(a + b)` and `θ₋ = (b − a)/(2n − a − b)`.
pub fn couplings_from_rates(a: f64, b: f64, n: usize) -> Result<Couplings> {
    let nf = n as f64;
    if a == b && a >= 0.0 {
        return Err(Error::DegenerateModel(format!(
            "a = b = {a} carries no community signal"
        )));
    }
    if !(b >= 0.0 && b < a && a <= nf) {
        return Err(invalid(format!(
            "rates need 0 <= b < a <= n, got a = {a}, b = {b}, n = {n}"
        )));
    }
    let theta_minus = if 2.0 * nf - a - b > 0.0 {
        (b - a) / (2.0 * nf - a - b)
    } else {
        0.0
    };
    Ok(Couplings {
        theta_plus: (a - b) / (a + b),
        theta_minus,
        n,
    })
}

/// `(k, ε) = ((a + b)/2, b/(a + b))`.
pub fn sbm_to_ks(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a + b > 0.0) || a < 0.0 || b < 0.0 {
        return Err(invalid(format!("need a, b >= 0 with a + b > 0, got {a}, {b}")));
    }
    Ok(((a + b) / 2.0, b / (a + b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsValue {
    pub value: f64,
    pub unstable: bool,
}

/// `k(1 − 2ε)²`; the trivial fixed point is unstable above 1.
pub fn ks_threshold(k: f64, eps: f64) -> Result<KsValue> {
    if !(k > 0.0) {
        return Err(invalid(format!("k must be positive, got {k}")));
    }
    let value = k * (1.0 - 2.0 * eps).powi(2);
    Ok(KsValue {
        value,
        unstable: value > 1.0,
    })
}

// The platform `atanh` is not exactly odd; evaluating on |x| and restoring
// the sign keeps spin-flip symmetry bit-exact.
#[inline]
fn atanh_clamped(x: f64) -> f64 {
    const EDGE: f64 = 1.0 - f64::EPSILON;
    x.abs().min(EDGE).atanh().copysign(x)
}

#[inline]
fn odd_tanh(x: f64) -> f64 {
    x.abs().tanh().copysign(x)
}

/// One message per directed edge, indexed by the graph's edge slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    pub values: Vec<f64>,
    pub iteration: usize,
}

impl MessageSet {
    pub fn zeros(graph: &SparseGraph) -> Self {
        Self {
            values: vec![0.0; graph.directed_edge_count()],
            iteration: 0,
        }
    }

    /// iid uniform on `[−scale, scale]`, in slot order.
    pub fn random(graph: &SparseGraph, scale: f64, rng: &mut ChaCha20Rng) -> Self {
        Self {
            values: (0..graph.directed_edge_count())
                .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
            iteration: 0,
        }
    }

    /// Message `u → v`, if that edge exists.
    pub fn get(&self, graph: &SparseGraph, u: usize, v: usize) -> Option<f64> {
        graph.slot(u, v).map(|e| self.values[e])
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            iteration: self.iteration,
        }
    }
}

/// Vertex held at a fixed spin: its outgoing messages are `±1`. Conditioning
/// on one spin breaks the global flip symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pin {
    pub vertex: usize,
    pub spin: i8,
}

fn check_messages(graph: &SparseGraph, messages: &MessageSet) -> Result<()> {
    if messages.values.len() != graph.directed_edge_count() {
        return Err(invalid(format!(
            "message set has {} entries, graph has {} directed edges",
            messages.values.len(),
            graph.directed_edge_count()
        )));
    }
    Ok(())
}

/// `atanh(θ₊ m_{w→u})` for every slot `u → w`, i.e. the term vertex `u`
/// receives back along each of its own out-edges.
fn incoming_terms(graph: &SparseGraph, messages: &[f64], theta: f64) -> Vec<f64> {
    (0..graph.directed_edge_count())
        .into_par_iter()
        .map(|e| atanh_clamped(theta * messages[graph.reverse(e)]))
        .collect()
}

fn vertex_totals(graph: &SparseGraph, terms: &[f64]) -> Vec<f64> {
    (0..graph.vertex_count())
        .into_par_iter()
        .map(|u| terms[graph.out_slots(u)].iter().sum())
        .collect()
}

/// Non-edge field `Σ_{w≁u, w≠u} atanh(θ₋ m_w)`, computed as the global sum
/// minus the self and neighbour terms.
fn non_edge_fields(graph: &SparseGraph, beliefs: &[f64], theta_minus: f64) -> Vec<f64> {
    let per_vertex: Vec<f64> = beliefs
        .par_iter()
        .map(|&b| atanh_clamped(theta_minus * b))
        .collect();
    let total: f64 = per_vertex.iter().sum();
    (0..graph.vertex_count())
        .into_par_iter()
        .map(|u| {
            let local: f64 = graph.neighbors(u).iter().map(|&w| per_vertex[w]).sum();
            total - per_vertex[u] - local
        })
        .collect()
}

fn finite_or_fail(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(format!("non-finite {what} at index {i}")));
    }
    Ok(())
}

struct Sweep {
    messages: Vec<f64>,
    beliefs: Vec<f64>,
}

fn sweep(
    graph: &SparseGraph,
    messages: &[f64],
    beliefs: Option<&[f64]>,
    couplings: &Couplings,
    pin: Option<Pin>,
) -> Sweep {
    let terms = incoming_terms(graph, messages, couplings.theta_plus);
    let mut totals = vertex_totals(graph, &terms);
    if let Some(b) = beliefs {
        let h = non_edge_fields(graph, b, couplings.theta_minus);
        totals.iter_mut().zip(&h).for_each(|(t, x)| *t += x);
    }
    let mut new_messages: Vec<f64> = (0..graph.directed_edge_count())
        .into_par_iter()
        .map(|e| odd_tanh(totals[graph.source(e)] - terms[e]))
        .collect();
    let mut new_beliefs: Vec<f64> = totals.iter().map(|&t| odd_tanh(t)).collect();
    if let Some(p) = pin {
        let s = f64::from(p.spin);
        for e in graph.out_slots(p.vertex) {
            new_messages[e] = s;
        }
        new_beliefs[p.vertex] = s;
    }
    Sweep {
        messages: new_messages,
        beliefs: new_beliefs,
    }
}

/// Synchronous edge-only update.
pub fn bp_edge_step(
    graph: &SbmInstance,
    messages: &MessageSet,
    couplings: &Couplings,
) -> Result<MessageSet> {
    let g = graph.graph();
    check_messages(g, messages)?;
    let out = sweep(g, &messages.values, None, couplings, None);
    finite_or_fail(&out.messages, "message")?;
    Ok(MessageSet {
        values: out.messages,
        iteration: messages.iteration + 1,
    })
}

/// Synchronous update including the non-edge field from the current vertex
/// beliefs. Returns the new messages and the new beliefs.
pub fn bp_full_step(
    graph: &SbmInstance,
    messages: &MessageSet,
    beliefs: &[f64],
    couplings: &Couplings,
) -> Result<(MessageSet, Vec<f64>)> {
    let g = graph.graph();
    check_messages(g, messages)?;
    if beliefs.len() != graph.n {
        return Err(invalid(format!(
            "belief vector has length {}, expected {}",
            beliefs.len(),
            graph.n
        )));
    }
    let out = sweep(g, &messages.values, Some(beliefs), couplings, None);
    finite_or_fail(&out.messages, "message")?;
    finite_or_fail(&out.beliefs, "belief")?;
    Ok((
        MessageSet {
            values: out.messages,
            iteration: messages.iteration + 1,
        },
        out.beliefs,
    ))
}

/// Vertex beliefs from all incoming messages (plus the non-edge field when
/// `beliefs` is given).
pub fn beliefs_from_messages(
    graph: &SparseGraph,
    messages: &[f64],
    beliefs: Option<&[f64]>,
    couplings: &Couplings,
) -> Vec<f64> {
    let terms = incoming_terms(graph, messages, couplings.theta_plus);
    let mut totals = vertex_totals(graph, &terms);
    if let Some(b) = beliefs {
        let h = non_edge_fields(graph, b, couplings.theta_minus);
        totals.iter_mut().zip(&h).for_each(|(t, x)| *t += x);
    }
    totals.into_iter().map(odd_tanh).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpMode {
    EdgeOnly,
    Full,
}

impl std::str::FromStr for BpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-only" | "edge" => Ok(BpMode::EdgeOnly),
            "full" => Ok(BpMode::Full),
            other => Err(invalid(format!(
                "unknown BP mode {other:?} (expected edge-only or full)"
            ))),
        }
    }
}

impl std::fmt::Display for BpMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BpMode::EdgeOnly => "edge-only",
            BpMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub mode: BpMode,
    pub init_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Weight on the previous messages once oscillation is detected.
    pub damping: f64,
    pub pin: Option<Pin>,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            mode: BpMode::Full,
            init_scale: 0.1,
            max_iters: 200,
            tol: 1e-6,
            damping: 0.2,
            pin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpRun {
    pub messages: MessageSet,
    pub beliefs: Vec<f64>,
    pub overlap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub damped: bool,
}

/// Runs BP from iid uniform messages on `[−init_scale, init_scale]`.
pub fn bp_run(
    graph: &SbmInstance,
    couplings: &Couplings,
    opts: &BpOptions,
    seed: SeedSpec,
) -> Result<BpRun> {
    if !(opts.init_scale >= 0.0 && opts.init_scale < 1.0) {
        return Err(invalid("init_scale must lie in [0, 1)"));
    }
    let init = MessageSet::random(graph.graph(), opts.init_scale, &mut seed.rng());
    bp_run_from(graph, couplings, opts, init)
}

/// Runs BP from the given messages until the largest message change is
/// below `tol` or `max_iters` sweeps have been made. Damping switches on
/// after the signed mean change alternates sign three times in a row
/// without the largest change shrinking.
pub fn bp_run_from(
    graph: &SbmInstance,
    couplings: &Couplings,
    opts: &BpOptions,
    init: MessageSet,
) -> Result<BpRun> {
    if opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(invalid("max_iters and tol must be positive"));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(invalid("damping must lie in [0, 1)"));
    }
    let g = graph.graph();
    check_messages(g, &init)?;
    if let Some(p) = opts.pin {
        if p.vertex >= graph.n || (p.spin != 1 && p.spin != -1) {
            return Err(invalid("pin must name a vertex and a spin of +1 or -1"));
        }
    }
    let full = opts.mode == BpMode::Full;
    let mut messages = init.values;
    let mut beliefs = beliefs_from_messages(g, &messages, None, couplings);
    let mut converged = false;
    let mut iterations = 0;
    let mut damped = false;
    let mut signed_history: Vec<f64> = Vec::new();
    let mut max_history: Vec<f64> = Vec::new();

    while iterations < opts.max_iters {
        let out = sweep(g, &messages, full.then_some(&beliefs[..]), couplings, opts.pin);
        finite_or_fail(&out.messages, "message")?;
        let mut next = out.messages;
        let mut next_beliefs = out.beliefs;
        if damped {
            let d = opts.damping;
            next.iter_mut()
                .zip(&messages)
                .for_each(|(m, &old)| *m = (1.0 - d) * *m + d * old);
            next_beliefs
                .iter_mut()
                .zip(&beliefs)
                .for_each(|(m, &old)| *m = (1.0 - d) * *m + d * old);
        }
        let mut max_change: f64 = 0.0;
        let mut signed = 0.0;
        for (a, b) in next.iter().zip(&messages) {
            max_change = max_change.max((a - b).abs());
            signed += a - b;
        }
        messages = next;
        beliefs = next_beliefs;
        iterations += 1;
        if max_change < opts.tol {
            converged = true;
            break;
        }
        signed_history.push(signed);
        max_history.push(max_change);
        let h = signed_history.len();
        if !damped && h >= 4 {
            let s = &signed_history[h - 4..];
            let alternating = s.windows(2).all(|w| w[0] * w[1] < 0.0);
            if alternating && max_history[h - 1] >= max_history[h - 3] {
                damped = opts.damping > 0.0;
            }
        }
    }

    let beliefs = if full {
        let mut b = beliefs_from_messages(g, &messages, Some(&beliefs), couplings);
        if let Some(p) = opts.pin {
            b[p.vertex] = f64::from(p.spin);
        }
        b
    } else {
        let mut b = beliefs_from_messages(g, &messages, None, couplings);
        if let Some(p) = opts.pin {
            b[p.vertex] = f64::from(p.spin);
        }
        b
    };
    let ov = overlap(&beliefs, &graph.truth)?;
    Ok(BpRun {
        messages: MessageSet {
            values: messages,
            iteration: init.iteration + iterations,
        },
        beliefs,
        overlap: ov,
        converged,
        iterations,
        damped,
    })
}

/// Upward recursion `m_v = tanh(Σ_children atanh((1 − 2ε) m_u))` with each
/// leaf emitting `spin · leaf_init`. Returns the root message.
pub fn tree_bp_root(tree: &GwTree, eps: f64, leaf_init: f64) -> Result<f64> {
    if !(leaf_init.abs() < 1.0) {
        return Err(invalid(format!("leaf_init must lie in (-1, 1), got {leaf_init}")));
    }
    if !(0.0..=0.5).contains(&eps) {
        return Err(invalid(format!("eps must lie in [0, 1/2], got {eps}")));
    }
    let theta = 1.0 - 2.0 * eps;
    let children = tree.children();
    let mut msg = vec![0.0; tree.len()];
    // parents precede children, so a reverse sweep is bottom-up
    for v in (0..tree.len()).rev() {
        msg[v] = if children[v].is_empty() {
            f64::from(tree.nodes[v].spin) * leaf_init
        } else {
            children[v]
                .iter()
                .map(|&u| atanh_clamped(theta * msg[u]))
                .sum::<f64>()
                .tanh()
        };
    }
    Ok(msg[0])
}

const POOL_CHUNK: usize = 1024;

/// Empirical representation of the message law `D₊` for `+` spins; the law
/// for `−` spins is its mirror image.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePool {
    pub samples: Vec<f64>,
    pub k: f64,
    pub eps: f64,
    pub iteration: usize,
    seed: SeedSpec,
}

impl MessagePool {
    /// Samples start at `init` plus uniform jitter of half-width `init/10`.
    pub fn new(k: f64, eps: f64, size: usize, init: f64, seed: SeedSpec) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(invalid(format!("k must be positive, got {k}")));
        }
        if !(0.0..=0.5).contains(&eps) {
            return Err(invalid(format!("eps must lie in [0, 1/2], got {eps}")));
        }
        if size == 0 {
            return Err(invalid("pool must be non-empty"));
        }
        if !(init.abs() < 1.0) {
            return Err(invalid("init must lie in (-1, 1)"));
        }
        let mut rng = seed.derive(u64::MAX).rng();
        let jitter = init / 10.0;
        let samples = (0..size)
            .map(|_| init + jitter * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Ok(Self {
            samples,
            k,
            eps,
            iteration: 0,
            seed,
        })
    }

    /// Replaces every sample by a fresh tree-recursion output whose children
    /// are drawn with replacement from the current pool (opposite-spin
    /// children negated). Chunks of the pool have their own streams.
    pub fn step(&mut self) {
        let theta = 1.0 - 2.0 * self.eps;
        let rate_same = (1.0 - self.eps) * self.k;
        let rate_opp = self.eps * self.k;
        let old = &self.samples;
        let size = old.len();
        let iter_seed = self.seed.derive(self.iteration as u64);
        let mut next = vec![0.0; size];
        next.par_chunks_mut(POOL_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut rng = iter_seed.derive(c as u64).rng();
                for slot in chunk.iter_mut() {
                    let same = poisson(rate_same, &mut rng);
                    let opp = poisson(rate_opp, &mut rng);
                    let mut field = 0.0;
                    for _ in 0..same {
                        field += atanh_clamped(theta * old[rng.random_range(0..size)]);
                    }
                    for _ in 0..opp {
                        field -= atanh_clamped(theta * old[rng.random_range(0..size)]);
                    }
                    *slot = field.tanh();
                }
            });
        self.samples = next;
        self.iteration += 1;
    }

    /// `(mean, second moment)` summed in index order.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.samples.len() as f64;
        let (s, s2) = self
            .samples
            .iter()
            .fold((0.0, 0.0), |(a, b), &x| (a + x, b + x * x));
        (s / n, s2 / n)
    }
}

/// Population dynamics for the distributional tree recursion. Returns the
/// `(mean, second moment)` of the pool before the first update and after
/// each of the `iters` updates.
pub fn population_dynamics(
    k: f64,
    eps: f64,
    pool_size: usize,
    iters: usize,
    init: f64,
    seed: SeedSpec,
) -> Result<Vec<(f64, f64)>> {
    if pool_size < 1000 {
        return Err(invalid(format!("pool size must be at least 1000, got {pool_size}")));
    }
    let mut pool = MessagePool::new(k, eps, pool_size, init, seed)?;
    let mut out = Vec::with_capacity(iters + 1);
    out.push(pool.moments());
    for _ in 0..iters {
        pool.step();
        out.push(pool.moments());
    }
    Ok(out)
}

pub const GROWTH_WINDOW: usize = 5;
pub const GROWTH_INIT: f64 = 1e-4;

/// Per-iteration growth factor of the pool mean near the trivial fixed
/// point: the geometric mean of the ratios of successive means over the
/// first five updates, started from `1e-4`.
pub fn linear_growth_rate(
    k: f64,
    eps: f64,
    pool_size: usize,
    iters: usize,
    seed: SeedSpec,
) -> Result<f64> {
    if iters < GROWTH_WINDOW {
        return Err(invalid(format!("need at least {GROWTH_WINDOW} iterations")));
    }
    let trace = population_dynamics(k, eps, pool_size, GROWTH_WINDOW, GROWTH_INIT, seed)?;
    let m0 = trace[0].0;
    if !(m0 > 0.0) {
        return Err(Error::NumericFailure("initial pool mean is zero".into()));
    }
    if 1.0 - 2.0 * eps == 0.0 {
        // messages are identically zero after one update
        return Ok(0.0);
    }
    if let Some(t) = trace.iter().position(|&(m, _)| !(m > 0.0)) {
        return Err(Error::NumericFailure(format!(
            "pool mean reached {} at iteration {t}; increase the initial value",
            trace[t].0
        )));
    }
    let mt = trace[GROWTH_WINDOW].0;
    Ok((mt / m0).powf(1.0 / GROWTH_WINDOW as f64))
}
