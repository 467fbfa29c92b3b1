//! Belief propagation on trees against brute-force enumeration.

use rand::Rng;
use spinglass::bp::{
    bp_run_from, couplings_from_rates, tree_bp_root, BpMode, BpOptions, MessageSet, Pin,
};
use spinglass::exact::{enumerate_gibbs, GibbsSpec, PairwiseHamiltonian};
use spinglass::models::{sample_galton_watson, GwTree, SbmInstance};
use spinglass::SeedSpec;

/// Random labelled tree on `n` vertices: each vertex after the first picks
/// an earlier parent uniformly.
fn random_tree(n: usize, a: f64, b: f64, seed: u64) -> SbmInstance {
    let mut rng = SeedSpec::new(seed, 7).rng();
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    let truth = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    SbmInstance::from_edges(n, a, b, edges, truth, SeedSpec::new(seed, 0)).unwrap()
}

fn edge_only(pin: Option<Pin>) -> BpOptions {
    BpOptions {
        mode: BpMode::EdgeOnly,
        max_iters: 200,
        tol: 1e-14,
        pin,
        ..BpOptions::default()
    }
}

#[test]
fn gauge_fixed_marginals_match_enumeration() {
    for (case, n) in [(0u64, 8usize), (1, 11), (2, 14), (3, 14), (4, 7)] {
        let (a, b) = (7.0, 2.0);
        let inst = random_tree(n, a, b, case);
        let c = couplings_from_rates(a, b, n).unwrap();
        let h = PairwiseHamiltonian::graph_ising(&inst, c.theta_plus);
        let exact = enumerate_gibbs(&GibbsSpec::new(h, 1.0, n).unwrap()).unwrap();

        let mut rng = SeedSpec::new(case, 9).rng();
        let init = MessageSet::random(inst.graph(), 0.5, &mut rng);
        let pin = Pin { vertex: 0, spin: 1 };
        let run = bp_run_from(&inst, &c, &edge_only(Some(pin)), init).unwrap();
        assert!(run.converged);
        for (i, (bp, ex)) in run.beliefs.iter().zip(&exact.gauge_fixed).enumerate() {
            assert!((bp - ex).abs() < 1e-8, "case {case} vertex {i}: {bp} vs {ex}");
        }
    }
}

#[test]
fn pair_means_match_enumeration() {
    let n = 12;
    let inst = random_tree(n, 6.0, 1.0, 42);
    let c = couplings_from_rates(6.0, 1.0, n).unwrap();
    let h = PairwiseHamiltonian::graph_ising(&inst, c.theta_plus);
    let exact = enumerate_gibbs(&GibbsSpec::new(h, 1.0, n).unwrap()).unwrap();
    for i in 0..n {
        let pin = Pin { vertex: i, spin: 1 };
        let run = bp_run_from(&inst, &c, &edge_only(Some(pin)), MessageSet::zeros(inst.graph())).unwrap();
        for j in 0..n {
            let want = exact.pair_mean(i, j);
            assert!((run.beliefs[j] - want).abs() < 1e-8, "({i}, {j})");
        }
    }
}

#[test]
fn unpinned_beliefs_vanish_like_raw_marginals() {
    let inst = random_tree(10, 5.0, 1.0, 3);
    let c = couplings_from_rates(5.0, 1.0, 10).unwrap();
    let init = MessageSet::random(inst.graph(), 0.9, &mut SeedSpec::new(3, 3).rng());
    let run = bp_run_from(&inst, &c, &edge_only(None), init).unwrap();
    assert!(run.converged);
    assert!(run.beliefs.iter().all(|b| b.abs() < 1e-8));
}

#[test]
fn root_recursion_matches_enumeration_on_fixed_tree() {
    // 10 nodes, three generations
    let shape: [(i8, Option<usize>); 10] = [
        (1, None),
        (1, Some(0)),
        (-1, Some(0)),
        (1, Some(0)),
        (1, Some(1)),
        (1, Some(1)),
        (-1, Some(2)),
        (1, Some(3)),
        (-1, Some(4)),
        (1, Some(4)),
    ];
    let eps = 0.1;
    let tree = GwTree::from_parents(&shape, 3.0, eps).unwrap();
    let root = tree_bp_root(&tree, eps, 0.3).unwrap();
    let h = PairwiseHamiltonian::tree_with_leaf_fields(&tree, eps, 0.3);
    let exact = enumerate_gibbs(&GibbsSpec::new(h, 1.0, tree.len()).unwrap()).unwrap();
    assert!((root - exact.marginals[0]).abs() < 1e-8, "{root} vs {}", exact.marginals[0]);
}

#[test]
fn root_recursion_matches_enumeration_on_sampled_trees() {
    let mut checked = 0;
    for s in 0..40 {
        let tree = sample_galton_watson(1.8, 0.2, 3, SeedSpec::new(s, 0)).unwrap();
        if tree.len() < 2 || tree.len() > 14 {
            continue;
        }
        let root = tree_bp_root(&tree, 0.2, -0.45).unwrap();
        let h = PairwiseHamiltonian::tree_with_leaf_fields(&tree, 0.2, -0.45);
        let exact = enumerate_gibbs(&GibbsSpec::new(h, 1.0, tree.len()).unwrap()).unwrap();
        assert!((root - exact.marginals[0]).abs() < 1e-8, "seed {s}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} usable trees");
}
