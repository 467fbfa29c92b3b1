//! Stored exact posterior marginals for a small spiked Wigner instance.

use spinglass::exact::{exact_posterior_marginals, MarginalFixture};
use spinglass::models::gen_spiked_wigner;

const FIXTURE: &str = include_str!("fixtures/spiked_wigner_n12.json");

#[test]
fn spiked_wigner_marginals_are_reproduced() {
    let fixture: MarginalFixture = serde_json::from_str(FIXTURE).unwrap();
    let n = fixture.marginals.len();
    let inst = gen_spiked_wigner(n, fixture.params["lambda"], fixture.instance_seed).unwrap();
    let summary = exact_posterior_marginals(&inst).unwrap();
    assert!((summary.log_partition - fixture.log_z).abs() < 1e-10 * fixture.log_z.abs());
    for (i, (got, want)) in summary.gauge_fixed.iter().zip(&fixture.marginals).enumerate() {
        assert!((got - want).abs() < 1e-12, "spin {i}: {got} vs {want}");
    }
    assert_eq!(summary.gauge_fixed[0], 1.0);
}

#[test]
fn fixture_marginals_point_at_the_planted_signal() {
    let fixture: MarginalFixture = serde_json::from_str(FIXTURE).unwrap();
    let n = fixture.marginals.len();
    let inst = gen_spiked_wigner(n, fixture.params["lambda"], fixture.instance_seed).unwrap();
    let agree = fixture
        .marginals
        .iter()
        .zip(&inst.truth)
        .filter(|(m, &t)| m.signum() == f64::from(t * inst.truth[0]))
        .count();
    assert!(agree >= n - 1, "{agree} of {n}");
}
