//! Term-by-term agreement between the averaged normal form and direct
//! second-order perturbation sums, on the bundled models and on a seeded
//! family of random ones.

use qnf::models::{anharmonic, henon_heiles};
use qnf::oracle::rs_block_order2;
use qnf::verify::{random_model, rs_equivalence_check, second_order_sum_check, Stream};

fn assert_all_pass(checks: &[qnf::Check]) {
    for check in checks {
        assert!(
            check.passed,
            "{} failed: value {:e} vs bound {:e} ({})",
            check.name, check.value, check.bound, check.detail
        );
    }
}

#[test]
fn anharmonic_matches_direct_sums() {
    let exp = anharmonic(60).expand(2).unwrap();
    assert_all_pass(&[rs_equivalence_check(&exp).unwrap()]);
    assert_all_pass(&[second_order_sum_check(&exp).unwrap()]);
}

#[test]
fn henon_heiles_matches_direct_sums() {
    let exp = henon_heiles(14, 0.1, 0.1).expand(2).unwrap();
    assert_all_pass(&[rs_equivalence_check(&exp).unwrap()]);
    assert_all_pass(&[second_order_sum_check(&exp).unwrap()]);
}

#[test]
fn hundred_random_models_match_direct_sums() {
    let mut root = Stream::new(0x5eed_0002);
    for trial in 0..100u32 {
        let mut stream = Stream::new(root.next_u64());
        let dim = 4 + stream.index(17);
        let levels = 2 + stream.index(dim.min(6) - 1);
        let (basis, series) = random_model(&mut stream, dim, levels);
        let exp = qnf::Expansion::expand(&series, &basis, 2).unwrap();
        for check in [
            rs_equivalence_check(&exp).unwrap(),
            second_order_sum_check(&exp).unwrap(),
        ] {
            assert!(
                check.passed,
                "trial {trial} (dim {dim}, {levels} levels): {} failed, \
                 value {:e} vs bound {:e}",
                check.name, check.value, check.bound
            );
        }
    }
}

#[test]
fn direct_block_sum_reproduces_known_pair_splitting() {
    // The degenerate pair of the two-mode model at E0 = 2 splits at second
    // order; the direct sum and the closed forms must agree on both roots.
    let (alpha, beta) = (0.1, 0.1);
    let model = henon_heiles(14, alpha, beta);
    let eps = 0.35;
    let block = rs_block_order2(&model.hamiltonian, &model.basis, 1, eps).unwrap();
    let eig = qnf::sorted_hermitian_eigen(&block);

    let (a2, b2, ab) = (alpha * alpha, beta * beta, alpha * beta);
    let e11 = 2.0 - 11.0 * b2 / 8.0 - 11.0 * a2 / 8.0 - 9.0 * ab / 4.0;
    let e12 = 2.0 - 71.0 * b2 / 8.0 - 13.0 * a2 / 24.0 - 9.0 * ab / 4.0;
    let mut want = [
        2.0 + (e11 - 2.0) * eps * eps,
        2.0 + (e12 - 2.0) * eps * eps,
    ];
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (got, want) in eig.0.iter().zip(&want) {
        assert!(
            (got - want).abs() < 1e-12,
            "pair splitting: {:?} vs {want:?}",
            eig.0
        );
    }
}

#[test]
fn equivalence_survives_level_permutation_of_random_degeneracies() {
    // Same spectrum, different degeneracy layout: the agreement is a
    // property of the construction, not of one lucky block shape.
    let mut stream = Stream::new(97);
    for levels in 2..=5usize {
        let (basis, series) = random_model(&mut stream, 12, levels);
        let exp = qnf::Expansion::expand(&series, &basis, 2).unwrap();
        assert_all_pass(&[
            rs_equivalence_check(&exp).unwrap(),
            second_order_sum_check(&exp).unwrap(),
        ]);
    }
}
