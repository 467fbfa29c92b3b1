//! Planted instances: the Rademacher spiked Wigner matrix, the two-community
//! sparse block model, and the two-type Galton–Watson tree, plus the
//! sign-invariant overlap.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::SeedSpec;

const TRUTH_TAG: u64 = u64::MAX;
const ROW_TAG_BASE: u64 = 1 << 40;

/// Uniform ±1 vector.
pub fn random_spins(n: usize, rng: &mut ChaCha20Rng) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect()
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Checks squareness and exact symmetry.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = M x`. Rows run in parallel, each row is a sequential dot product,
    /// so the result does not depend on the thread count.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        self.data
            .par_chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Observation `Y = (λ/n) x xᵀ + W/√n` with hidden `x ∈ {±1}ⁿ`.
#[derive(Debug, Clone)]
pub struct DenseInstance {
    pub n: usize,
    pub lambda: f64,
    pub observation: SymMatrix,
    pub truth: Vec<i8>,
    pub seed: SeedSpec,
}

impl DenseInstance {
    /// Wraps an explicit observation, e.g. a hand-written fixture.
    pub fn from_parts(
        lambda: f64,
        observation: SymMatrix,
        truth: Vec<i8>,
        seed: SeedSpec,
    ) -> Result<Self> {
        let n = observation.dim();
        check_spins(&truth, n)?;
        if !(lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            n,
            lambda,
            observation,
            truth,
            seed,
        })
    }

    pub fn record(&self, store_observation: bool) -> InstanceRecord {
        InstanceRecord {
            model: ModelKind::SpikedWigner,
            n: self.n,
            params: BTreeMap::from([("lambda".to_string(), self.lambda)]),
            seed: self.seed,
            truth: Some(self.truth.clone()),
            edges: None,
            matrix: store_observation.then(|| self.observation.as_slice().to_vec()),
        }
    }
}

fn check_spins(spins: &[i8], n: usize) -> Result<()> {
    if spins.len() != n {
        return Err(invalid(format!(
            "truth has length {}, expected {n}",
            spins.len()
        )));
    }
    if spins.iter().any(|&s| s != 1 && s != -1) {
        return Err(invalid("truth entries must be +1 or -1"));
    }
    Ok(())
}

/// Draws a spiked Wigner instance. The noise is GOE: off-diagonal entries
/// N(0, 1) and diagonal entries N(0, 2), all scaled by `n^{-1/2}`. Each row
/// of the upper triangle has its own derived stream.
pub fn gen_spiked_wigner(n: usize, lambda: f64, seed: SeedSpec) -> Result<DenseInstance> {
    if n < 2 {
        return Err(invalid(format!("spiked Wigner needs n >= 2, got {n}")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let truth = random_spins(n, &mut seed.derive(TRUTH_TAG).rng());
    let nf = n as f64;
    let scale = 1.0 / nf.sqrt();
    let signal = lambda / nf;

    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(ROW_TAG_BASE + i as u64).rng();
            (i..n)
                .map(|j| {
                    let g: f64 = rng.sample(StandardNormal);
                    let noise = if i == j { std::f64::consts::SQRT_2 * g } else { g };
                    signal * f64::from(truth[i] * truth[j]) + scale * noise
                })
                .collect()
        })
        .collect();

    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(DenseInstance {
        n,
        lambda,
        observation: SymMatrix { n, data },
        truth,
        seed,
    })
}

/// Adjacency in CSR form with an index for every directed edge.
///
/// Directed edge `e` runs from the vertex owning slot `e` to `targets[e]`;
/// `reverse[e]` is the slot of the opposite direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    sources: Vec<usize>,
    reverse: Vec<usize>,
}

impl SparseGraph {
    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets[..n].to_vec();
        let m = offsets[n];
        let mut targets = vec![0usize; m];
        let mut sources = vec![0usize; m];
        let mut reverse = vec![0usize; m];
        for &(u, v) in edges {
            let eu = fill[u];
            let ev = fill[v];
            fill[u] += 1;
            fill[v] += 1;
            targets[eu] = v;
            sources[eu] = u;
            targets[ev] = u;
            sources[ev] = v;
            reverse[eu] = ev;
            reverse[ev] = eu;
        }
        Self {
            offsets,
            targets,
            sources,
            reverse,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn directed_edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Slots of the directed edges leaving `v`.
    pub fn out_slots(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn source(&self, e: usize) -> usize {
        self.sources[e]
    }

    pub fn target(&self, e: usize) -> usize {
        self.targets[e]
    }

    pub fn reverse(&self, e: usize) -> usize {
        self.reverse[e]
    }

    /// Slot of the directed edge `u → v`, if present.
    pub fn slot(&self, u: usize, v: usize) -> Option<usize> {
        self.out_slots(u).find(|&e| self.targets[e] == v)
    }
}

/// Sparse two-community block model instance.
#[derive(Debug, Clone)]
pub struct SbmInstance {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// Unordered pairs `(u, v)` with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub truth: Vec<i8>,
    pub seed: SeedSpec,
    graph: SparseGraph,
}

impl SbmInstance {
    /// Builds an instance from an explicit edge list. Rates are only
    /// recorded, not checked against the edges.
    pub fn from_edges(
        n: usize,
        a: f64,
        b: f64,
        edges: Vec<(usize, usize)>,
        truth: Vec<i8>,
        seed: SeedSpec,
    ) -> Result<Self> {
        check_spins(&truth, n)?;
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(invalid(format!("duplicate edge {:?}", w[0])));
            }
        }
        for &(u, v) in &edges {
            if u == v {
                return Err(invalid(format!("self-loop at vertex {u}")));
            }
            if v >= n {
                return Err(invalid(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
        }
        let graph = SparseGraph::from_edges(n, &edges);
        Ok(Self {
            n,
            a,
            b,
            edges,
            truth,
            seed,
            graph,
        })
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n as f64
    }

    pub fn record(&self, store_observation: bool) -> InstanceRecord {
        InstanceRecord {
            model: ModelKind::Sbm,
            n: self.n,
            params: BTreeMap::from([("a".to_string(), self.a), ("b".to_string(), self.b)]),
            seed: self.seed,
            truth: Some(self.truth.clone()),
            edges: store_observation
                .then(|| self.edges.iter().map(|&(u, v)| [u, v]).collect()),
            matrix: None,
        }
    }
}

/// Draws a block model graph: same-community pairs are joined with
/// probability `a/n`, cross pairs with `b/n`. Requires `0 <= b < a <= n`.
pub fn gen_sbm(n: usize, a: f64, b: f64, seed: SeedSpec) -> Result<SbmInstance> {
    if !(b >= 0.0 && b < a && a <= n as f64) {
        return Err(invalid(format!(
            "block model rates need 0 <= b < a <= n, got a = {a}, b = {b}, n = {n}"
        )));
    }
    sample_sbm(n, a, b, seed)
}

/// Null model with equal rates `a = b = d`: labels carry no information
/// about the graph. Kept separate from [`gen_sbm`], which insists on `a > b`.
pub fn gen_sbm_null(n: usize, d: f64, seed: SeedSpec) -> Result<SbmInstance> {
    if !(d >= 0.0 && d <= n as f64) {
        return Err(invalid(format!("rate must lie in [0, n], got {d}")));
    }
    sample_sbm(n, d, d, seed)
}

fn sample_sbm(n: usize, a: f64, b: f64, seed: SeedSpec) -> Result<SbmInstance> {
    if n < 2 {
        return Err(invalid(format!("block model needs n >= 2, got {n}")));
    }
    let truth = random_spins(n, &mut seed.derive(TRUTH_TAG).rng());
    let plus: Vec<usize> = (0..n).filter(|&v| truth[v] == 1).collect();
    let minus: Vec<usize> = (0..n).filter(|&v| truth[v] == -1).collect();
    let p_same = a / n as f64;
    let p_cross = b / n as f64;

    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(ROW_TAG_BASE + i as u64).rng();
            let (same, other) = if truth[i] == 1 {
                (&plus, &minus)
            } else {
                (&minus, &plus)
            };
            let mut out = Vec::new();
            let same_tail = &same[same.partition_point(|&v| v <= i)..];
            let other_tail = &other[other.partition_point(|&v| v <= i)..];
            bernoulli_subset(same_tail, p_same, &mut rng, &mut out);
            bernoulli_subset(other_tail, p_cross, &mut rng, &mut out);
            out.sort_unstable();
            out
        })
        .collect();

    let edges: Vec<(usize, usize)> = rows
        .into_iter()
        .enumerate()
        .flat_map(|(i, js)| js.into_iter().map(move |j| (i, j)))
        .collect();
    SbmInstance::from_edges(n, a, b, edges, truth, seed)
}

/// Keeps each element of `items` independently with probability `p`, using
/// geometric skips so the cost is proportional to the number kept.
fn bernoulli_subset(items: &[usize], p: f64, rng: &mut ChaCha20Rng, out: &mut Vec<usize>) {
    if p <= 0.0 || items.is_empty() {
        return;
    }
    if p >= 1.0 {
        out.extend_from_slice(items);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut idx = 0usize;
    loop {
        // u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (items.len() - idx) as f64 {
            break;
        }
        idx += skip as usize;
        out.push(items[idx]);
        idx += 1;
        if idx >= items.len() {
            break;
        }
    }
}

/// `|Σᵢ estimateᵢ · truthᵢ| / n`.
pub fn overlap(estimate: &[f64], truth: &[i8]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(invalid(format!(
            "overlap length mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(invalid("overlap of empty vectors"));
    }
    if let Some(bad) = estimate.iter().find(|v| !(v.abs() <= 1.0)) {
        return Err(invalid(format!("estimate entry {bad} outside [-1, 1]")));
    }
    let dot: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, &t)| e * f64::from(t))
        .sum();
    Ok(dot.abs() / estimate.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GwNode {
    pub spin: i8,
    pub parent: Option<usize>,
    pub depth: usize,
}

/// Two-type Galton–Watson tree. Nodes are stored in breadth-first order, so
/// every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct GwTree {
    pub nodes: Vec<GwNode>,
    pub depth: usize,
    pub k: f64,
    pub eps: f64,
}

impl GwTree {
    /// Builds a tree from `(spin, parent)` pairs in breadth-first order.
    pub fn from_parents(spins_parents: &[(i8, Option<usize>)], k: f64, eps: f64) -> Result<Self> {
        let mut nodes: Vec<GwNode> = Vec::with_capacity(spins_parents.len());
        for (i, &(spin, parent)) in spins_parents.iter().enumerate() {
            if spin != 1 && spin != -1 {
                return Err(invalid("tree spins must be +1 or -1"));
            }
            let depth = match (i, parent) {
                (0, None) => 0,
                (0, Some(_)) => return Err(invalid("root cannot have a parent")),
                (_, Some(p)) if p < i => nodes[p].depth + 1,
                _ => return Err(invalid(format!("node {i} needs an earlier parent"))),
            };
            nodes.push(GwNode {
                spin,
                parent,
                depth,
            });
        }
        if nodes.is_empty() {
            return Err(invalid("tree needs a root"));
        }
        let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        Ok(Self {
            nodes,
            depth,
            k,
            eps,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                ch[p].push(i);
            }
        }
        ch
    }
}

pub(crate) fn poisson(rate: f64, rng: &mut ChaCha20Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    let x: f64 = d.sample(rng);
    x as usize
}

/// Each vertex has Pois((1−ε)k) children of its own spin and Pois(εk) of
/// the opposite spin, down to `depth` generations below the root.
pub fn sample_galton_watson(k: f64, eps: f64, depth: usize, seed: SeedSpec) -> Result<GwTree> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(invalid(format!("k must be positive, got {k}")));
    }
    if !(0.0..=0.5).contains(&eps) {
        return Err(invalid(format!("eps must lie in [0, 1/2], got {eps}")));
    }
    let mut rng = seed.rng();
    let root_spin = if rng.random::<bool>() { 1 } else { -1 };
    let mut nodes = vec![GwNode {
        spin: root_spin,
        parent: None,
        depth: 0,
    }];
    let mut frontier = 0..1;
    for level in 0..depth {
        let start = nodes.len();
        for p in frontier.clone() {
            let spin = nodes[p].spin;
            let same = poisson((1.0 - eps) * k, &mut rng);
            let opposite = poisson(eps * k, &mut rng);
            for s in std::iter::repeat_n(spin, same).chain(std::iter::repeat_n(-spin, opposite)) {
                nodes.push(GwNode {
                    spin: s,
                    parent: Some(p),
                    depth: level + 1,
                });
            }
        }
        frontier = start..nodes.len();
        if frontier.is_empty() {
            break;
        }
    }
    Ok(GwTree {
        nodes,
        depth,
        k,
        eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpikedWigner,
    Sbm,
}

/// JSON form of an instance. The observation is regenerated from the seed
/// unless it was stored explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub model: ModelKind,
    pub n: usize,
    pub params: BTreeMap<String, f64>,
    pub seed: SeedSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
}

impl InstanceRecord {
    fn param(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| invalid(format!("instance record lacks parameter {key:?}")))
    }

    pub fn to_dense(&self) -> Result<DenseInstance> {
        if self.model != ModelKind::SpikedWigner {
            return Err(invalid("record does not describe a spiked Wigner instance"));
        }
        let lambda = self.param("lambda")?;
        match (&self.matrix, &self.truth) {
            (Some(m), Some(t)) => DenseInstance::from_parts(
                lambda,
                SymMatrix::from_row_major(self.n, m.clone())?,
                t.clone(),
                self.seed,
            ),
            _ => gen_spiked_wigner(self.n, lambda, self.seed),
        }
    }

    pub fn to_sbm(&self) -> Result<SbmInstance> {
        if self.model != ModelKind::Sbm {
            return Err(invalid("record does not describe a block model instance"));
        }
        let a = self.param("a")?;
        let b = self.param("b")?;
        match (&self.edges, &self.truth) {
            (Some(e), Some(t)) => SbmInstance::from_edges(
                self.n,
                a,
                b,
                e.iter().map(|&[u, v]| (u, v)).collect(),
                t.clone(),
                self.seed,
            ),
            _ if a == b => gen_sbm_null(self.n, a, self.seed),
            _ => gen_sbm(self.n, a, b, self.seed),
        }
    }
}
