//! Independent cross-checks for the normal form machinery.
//!
//! Everything here is deliberately written without the averaging
//! recursion: direct perturbation sums over raw matrix indices, exact
//! dense diagonalization, overlap-based state pairing, and log-log
//! convergence fits. Agreement between these routes and the expansion
//! is what the verification suite certifies.

use num_complex::Complex64;

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::expansion::EigenReport;
use crate::operator::{sorted_hermitian_eigen, CMatrix, OperatorSeries, HERMITICITY_RTOL};

/// Residuals below this sit in eigensolver noise for well-scaled inputs;
/// convergence fits exclude such points rather than fitting noise.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Textbook second-order degenerate block at one epsilon:
/// E0_j I + eps (H_1)_block + eps^2 ( (H_2)_block / 2
///   + sum_{k not in level j} (H_1)_{j.,k} (H_1)_{k,.j} / (E0_j - E0_k) ).
///
/// The sum runs over raw matrix indices; no averaging machinery is used.
pub fn rs_block_order2(
    h: &OperatorSeries,
    basis: &Basis,
    level: usize,
    epsilon: f64,
) -> Result<CMatrix> {
    if h.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            context: "rs_block_order2",
            expected: basis.dim(),
            found: h.dim(),
        });
    }
    if level >= basis.level_count() {
        return Err(Error::LevelOutOfRange {
            level,
            count: basis.level_count(),
        });
    }
    if !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon {
            index: 0,
            value: epsilon,
        });
    }

    let idx = basis.level_indices(level);
    let d = idx.len();
    let e0 = basis.energy(level);
    let h1 = h.coefficient_or_zero(1);
    let h2 = h.coefficient_or_zero(2);

    let mut block = CMatrix::zeros(d, d);
    for a in 0..d {
        block[(a, a)] = Complex64::new(e0, 0.0);
    }
    for a in 0..d {
        for b in 0..d {
            block[(a, b)] += h1.matrix()[(idx[a], idx[b])] * epsilon;
            block[(a, b)] += h2.matrix()[(idx[a], idx[b])] * (epsilon * epsilon / 2.0);
            let mut sum = Complex64::new(0.0, 0.0);
            for k in 0..basis.dim() {
                let lk = basis.level_of(k);
                if lk == level {
                    continue;
                }
                let gap = e0 - basis.energy(lk);
                sum += h1.matrix()[(idx[a], k)] * h1.matrix()[(k, idx[b])] / gap;
            }
            block[(a, b)] += sum * (epsilon * epsilon);
        }
    }
    Ok(block)
}

/// Full spectrum of H(eps) by dense Hermitian diagonalization.
#[derive(Debug, Clone)]
pub struct ExactEigen {
    pub epsilon: f64,
    /// Eigenvalues, ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvector columns matching `values`.
    pub vectors: CMatrix,
}

/// Diagonalizes H(eps) exactly (up to solver rounding).
pub fn exact_eigen(h: &OperatorSeries, epsilon: f64) -> Result<ExactEigen> {
    if !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon {
            index: 0,
            value: epsilon,
        });
    }
    let h_eps = h.eval(epsilon);
    let tol = HERMITICITY_RTOL * (1.0 + h_eps.max_norm());
    if !h_eps.is_hermitian_within(tol) {
        return Err(Error::NotHermitian {
            context: "H(epsilon)".to_string(),
            defect: h_eps.hermitian_defect(),
            tolerance: tol,
        });
    }
    let (values, vectors) = sorted_hermitian_eigen(h_eps.matrix());
    Ok(ExactEigen {
        epsilon,
        values,
        vectors,
    })
}

/// A contested pairing during greedy matching: `approx` wanted `exact`,
/// which had already been claimed by `winner` with a larger overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Conflict {
    pub approx: usize,
    pub exact: usize,
    pub winner: usize,
}

/// Result of pairing approximate states with exact ones by overlap.
#[derive(Debug, Clone)]
pub struct Pairing {
    /// For each approximate state (flattened report order), the index of
    /// the exact state assigned to it.
    pub assignment: Vec<usize>,
    /// |<exact_assigned | approx>| per approximate state.
    pub overlaps: Vec<f64>,
    /// Smallest singular value of the cross-Gram matrix per level;
    /// 1 when the exact and approximate block subspaces coincide.
    pub subspace_overlaps: Vec<f64>,
    /// States whose best exact match was claimed by a better overlap.
    pub conflicts: Vec<Conflict>,
}

/// Pairs every approximate state with a distinct exact state, greedily by
/// descending overlap. Ties break toward lower state indices, so the
/// pairing is deterministic.
pub fn match_states(exact: &ExactEigen, report: &EigenReport) -> Result<Pairing> {
    let vectors = report.flat_vectors();
    let n = vectors.len();
    if exact.values.len() != n {
        return Err(Error::LengthMismatch {
            context: "match_states",
            left: exact.values.len(),
            right: n,
        });
    }

    let mut overlap = vec![vec![0.0f64; n]; n];
    for (i, v) in vectors.iter().enumerate() {
        for k in 0..n {
            let col = exact.vectors.column(k);
            let mut dot = Complex64::new(0.0, 0.0);
            for r in 0..n {
                dot += col[r].conj() * v[r];
            }
            overlap[i][k] = dot.norm();
        }
    }

    // Greedy maximum matching over all (approx, exact) pairs.
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .collect();
    edges.sort_by(|&(i1, k1), &(i2, k2)| {
        overlap[i2][k2]
            .total_cmp(&overlap[i1][k1])
            .then(i1.cmp(&i2))
            .then(k1.cmp(&k2))
    });
    let mut assignment = vec![usize::MAX; n];
    let mut exact_taken = vec![usize::MAX; n];
    let mut assigned = 0;
    for &(i, k) in &edges {
        if assignment[i] == usize::MAX && exact_taken[k] == usize::MAX {
            assignment[i] = k;
            exact_taken[k] = i;
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }

    let mut conflicts = Vec::new();
    let mut overlaps = Vec::with_capacity(n);
    for i in 0..n {
        let best = (0..n)
            .max_by(|&a, &b| overlap[i][a].total_cmp(&overlap[i][b]))
            .expect("n > 0");
        if best != assignment[i] {
            conflicts.push(Conflict {
                approx: i,
                exact: best,
                winner: exact_taken[best],
            });
        }
        overlaps.push(overlap[i][assignment[i]]);
    }

    // Per level: sigma_min of the cross-Gram matrix between the exact
    // vectors assigned to the level and the level's approximate vectors.
    let mut subspace_overlaps = Vec::with_capacity(report.levels.len());
    let mut offset = 0;
    for level in &report.levels {
        let d = level.vectors.len();
        let mut gram = CMatrix::zeros(d, d);
        for a in 0..d {
            let k = assignment[offset + a];
            let col = exact.vectors.column(k);
            for b in 0..d {
                let mut dot = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    dot += col[r].conj() * level.vectors[b][r];
                }
                gram[(a, b)] = dot;
            }
        }
        let gtg = gram.adjoint() * &gram;
        let (eigs, _) = sorted_hermitian_eigen(&gtg);
        subspace_overlaps.push(eigs[0].max(0.0).sqrt());
        offset += d;
    }

    Ok(Pairing {
        assignment,
        overlaps,
        subspace_overlaps,
        conflicts,
    })
}

/// Least-squares fit of log(norm) against log(epsilon).
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination of the log-log fit.
    pub r_squared: f64,
    /// Points actually fitted, after dropping exact zeros.
    pub points_used: usize,
    /// Norms equal to zero are excluded: their log is undefined.
    pub excluded_zeros: usize,
}

/// Fits the convergence order of a residual against epsilon.
/// Exact zero norms are excluded; at least two nonzero points must remain.
pub fn fit_slope(epsilons: &[f64], norms: &[f64]) -> Result<SlopeFit> {
    if epsilons.len() != norms.len() {
        return Err(Error::LengthMismatch {
            context: "fit_slope",
            left: epsilons.len(),
            right: norms.len(),
        });
    }
    for (index, &e) in epsilons.iter().enumerate() {
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::InvalidEpsilon { index, value: e });
        }
    }
    for (index, &r) in norms.iter().enumerate() {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::NonFinite {
                context: "norms",
                index,
                value: r,
            });
        }
    }

    let pairs: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(norms)
        .filter(|&(_, &r)| r > 0.0)
        .map(|(&e, &r)| (e.ln(), r.ln()))
        .collect();
    let excluded_zeros = norms.len() - pairs.len();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            context: "fit_slope",
            needed: 2,
            found: pairs.len(),
        });
    }

    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::InsufficientData {
            context: "fit_slope: epsilons are all equal",
            needed: 2,
            found: 1,
        });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;

    let mean_y = sy / n;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pairs
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };

    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points_used: pairs.len(),
        excluded_zeros,
    })
}

/// A convergence measurement that may sit entirely below the noise floor.
#[derive(Debug, Clone, PartialEq)]
pub enum SlopeOutcome {
    Fit(SlopeFit),
    /// Fewer than three points rose above the floor; the largest observed
    /// norm is reported instead of a meaningless fit.
    AtFloor { max_norm: f64, above_floor: usize },
}

/// Like [`fit_slope`], but drops points at or below `floor` first. Rounding
/// noise does not scale with epsilon, so fitting it would corrupt the
/// measured order precisely in the regimes where the method is best.
pub fn fit_slope_above_floor(
    epsilons: &[f64],
    norms: &[f64],
    floor: f64,
) -> Result<SlopeOutcome> {
    if epsilons.len() != norms.len() {
        return Err(Error::LengthMismatch {
            context: "fit_slope_above_floor",
            left: epsilons.len(),
            right: norms.len(),
        });
    }
    let mut eps_kept = Vec::new();
    let mut norm_kept = Vec::new();
    for (&e, &r) in epsilons.iter().zip(norms) {
        if r > floor {
            eps_kept.push(e);
            norm_kept.push(r);
        }
    }
    if eps_kept.len() < 3 {
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        return Ok(SlopeOutcome::AtFloor {
            max_norm,
            above_floor: eps_kept.len(),
        });
    }
    Ok(SlopeOutcome::Fit(fit_slope(&eps_kept, &norm_kept)?))
}

/// Geometric epsilon grid from lo to hi inclusive, ascending.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && lo > 0.0) {
        return Err(Error::InvalidEpsilon {
            index: 0,
            value: lo,
        });
    }
    if !(hi.is_finite() && hi > lo) {
        return Err(Error::InvalidEpsilon {
            index: 1,
            value: hi,
        });
    }
    if count < 2 {
        return Err(Error::InsufficientData {
            context: "log_grid",
            needed: 2,
            found: count,
        });
    }
    let l0 = lo.ln();
    let l1 = hi.ln();
    Ok((0..count)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use crate::expansion::Expansion;
    use crate::models::{anharmonic, henon_heiles};
    use crate::operator::Operator;
    use approx::assert_abs_diff_eq;

    fn two_level(coupling: f64) -> (Basis, OperatorSeries) {
        let basis = make_basis(&[0.0, 1.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0]);
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(coupling, 0.0),
                Complex64::new(coupling, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let h1 = Operator::hermitian(m, "h1").unwrap();
        (basis, OperatorSeries::new(vec![h0, h1], 1.0).unwrap())
    }

    #[test]
    fn rs_block_with_no_perturbation_is_unperturbed_energy() {
        let basis = make_basis(&[0.0, 1.0, 1.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0, 1.0]);
        let h = OperatorSeries::new(vec![h0], 1.0).unwrap();
        let block = rs_block_order2(&h, &basis, 1, 0.3).unwrap();
        assert_eq!(block.nrows(), 2);
        assert_eq!(block[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(block[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn rs_block_matches_two_level_closed_form() {
        // Level 0: E(eps) = eps^2 * 1 / (0 - 1) = -eps^2.
        let (basis, h) = two_level(1.0);
        let eps = 0.2;
        let block = rs_block_order2(&h, &basis, 0, eps).unwrap();
        assert_abs_diff_eq!(block[(0, 0)].re, -eps * eps, epsilon = 1e-15);
    }

    #[test]
    fn rs_block_matches_anharmonic_polynomial() {
        // For a simple level the RS block is 1x1 and equals the known
        // E^2_j(eps) polynomial for interior j.
        let model = anharmonic(40);
        let eps = 0.05;
        for j in [0usize, 3, 7] {
            let block = rs_block_order2(&model.hamiltonian, &model.basis, j, eps).unwrap();
            let jf = j as f64;
            let c1 = 0.375 * (jf * jf + jf) + 3.0 / 16.0;
            let c2 = -(17.0 / 64.0 * jf.powi(3)
                + 51.0 / 128.0 * jf * jf
                + 59.0 / 128.0 * jf
                + 21.0 / 128.0);
            let expected = jf + 0.5 + eps * c1 + eps * eps * c2;
            assert_abs_diff_eq!(block[(0, 0)].re, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn rs_block_matches_henon_heiles_first_level_formulas() {
        // The k=1 RS block eigenvalues at eps=1 are the two closed-form
        // second-order eigenvalues.
        let (alpha, beta) = (0.1, 0.1);
        let model = henon_heiles(14, alpha, beta);
        let block = rs_block_order2(&model.hamiltonian, &model.basis, 1, 1.0).unwrap();
        let (mut values, _) = sorted_hermitian_eigen(&block);
        let mut expected = vec![
            2.0 - 11.0 / 8.0 * beta * beta - 11.0 / 8.0 * alpha * alpha
                - 9.0 / 4.0 * beta * alpha,
            2.0 - 71.0 / 8.0 * beta * beta - 13.0 / 24.0 * alpha * alpha
                - 9.0 / 4.0 * beta * alpha,
        ];
        expected.sort_by(f64::total_cmp);
        values.sort_by(f64::total_cmp);
        for (v, e) in values.iter().zip(&expected) {
            assert_abs_diff_eq!(v, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_eigen_at_zero_is_sorted_diagonal() {
        let basis = make_basis(&[3.0, 1.0, 2.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[3.0, 1.0, 2.0]);
        let h = OperatorSeries::new(vec![h0], 1.0).unwrap();
        let eig = exact_eigen(&h, 0.0).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        let _ = basis;
    }

    #[test]
    fn exact_eigen_matches_two_level_closed_form() {
        let (_, h) = two_level(1.0);
        let eps = 0.3;
        let eig = exact_eigen(&h, eps).unwrap();
        let root = (1.0 + 4.0 * eps * eps).sqrt();
        assert_abs_diff_eq!(eig.values[0], (1.0 - root) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], (1.0 + root) / 2.0, epsilon = 1e-14);
        // Residual of the returned eigenpairs.
        let m = h.eval(eps);
        for k in 0..2 {
            let v = eig.vectors.column(k).clone_owned();
            let r = (m.matrix() * &v - v.map(|z| z * eig.values[k])).norm();
            assert!(r < 1e-14);
        }
    }

    #[test]
    fn match_states_is_identity_at_zero_epsilon() {
        let (basis, h) = two_level(1.0);
        let exp = Expansion::expand(&h, &basis, 2).unwrap();
        let report = exp.eigen_report(0.0).unwrap();
        let exact = exact_eigen(&h, 0.0).unwrap();
        let pairing = match_states(&exact, &report).unwrap();
        assert_eq!(pairing.assignment, vec![0, 1]);
        assert!(pairing.conflicts.is_empty());
        for o in &pairing.overlaps {
            assert_abs_diff_eq!(*o, 1.0, epsilon = 1e-12);
        }
        for s in &pairing.subspace_overlaps {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn match_states_tracks_a_level_crossing() {
        // H(eps) = diag(2 eps, 1 - 2 eps) crosses at eps = 0.25; past it
        // the sorted exact order no longer matches the level order.
        let basis = make_basis(&[0.0, 1.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0]);
        let h1 = Operator::from_real_diagonal(&[2.0, -2.0]);
        let h = OperatorSeries::new(vec![h0, h1], 1.0).unwrap();
        let exp = Expansion::expand(&h, &basis, 2).unwrap();
        let eps = 0.4;
        let report = exp.eigen_report(eps).unwrap();
        let exact = exact_eigen(&h, eps).unwrap();
        let pairing = match_states(&exact, &report).unwrap();
        assert_eq!(pairing.assignment, vec![1, 0]);
        for o in &pairing.overlaps {
            assert_abs_diff_eq!(*o, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn match_states_overlaps_are_high_for_anharmonic() {
        let model = anharmonic(30);
        let exp = model.expand(2).unwrap();
        let eps = 0.02;
        let report = exp.eigen_report(eps).unwrap();
        let exact = exact_eigen(&model.hamiltonian, eps).unwrap();
        let pairing = match_states(&exact, &report).unwrap();
        for j in 0..5 {
            assert_eq!(pairing.assignment[j], j);
            assert!(pairing.overlaps[j] > 0.9999, "overlap {}", pairing.overlaps[j]);
        }
    }

    #[test]
    fn fit_slope_recovers_synthetic_power_law() {
        let eps: Vec<f64> = log_grid(1e-3, 1e-1, 9).unwrap();
        let norms: Vec<f64> = eps.iter().map(|e| 3.7 * e.powf(2.5)).collect();
        let fit = fit_slope(&eps, &norms).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 3.7f64.ln(), epsilon = 1e-9);
        assert!(fit.r_squared > 0.999999);
        assert_eq!(fit.points_used, 9);
        assert_eq!(fit.excluded_zeros, 0);
    }

    #[test]
    fn fit_slope_excludes_exact_zeros_and_validates() {
        let eps = [1e-3, 1e-2, 1e-1];
        let fit = fit_slope(&eps, &[0.0, 1e-4, 1e-2]).unwrap();
        assert_eq!(fit.excluded_zeros, 1);
        assert_eq!(fit.points_used, 2);
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);

        assert!(matches!(
            fit_slope(&eps, &[0.0, 0.0, 1.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            fit_slope(&[1e-3, -1.0, 1e-1], &[1.0, 1.0, 1.0]),
            Err(Error::InvalidEpsilon { .. })
        ));
        assert!(matches!(
            fit_slope(&eps, &[1.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fit_slope_above_floor_reports_floor_outcomes() {
        let eps = [1e-3, 1e-2, 1e-1, 1.0];
        let all_tiny = [1e-16, 5e-16, 2e-15, 8e-13];
        match fit_slope_above_floor(&eps, &all_tiny, NOISE_FLOOR).unwrap() {
            SlopeOutcome::AtFloor {
                max_norm,
                above_floor,
            } => {
                assert_eq!(above_floor, 0);
                assert_abs_diff_eq!(max_norm, 8e-13);
            }
            other => panic!("expected AtFloor, got {other:?}"),
        }

        let mixed = [1e-16, 1e-9, 1e-6, 1e-3];
        match fit_slope_above_floor(&eps, &mixed, NOISE_FLOOR).unwrap() {
            SlopeOutcome::Fit(fit) => {
                assert_abs_diff_eq!(fit.slope, 3.0, epsilon = 1e-9);
                assert_eq!(fit.points_used, 3);
            }
            other => panic!("expected Fit, got {other:?}"),
        }
    }

    #[test]
    fn log_grid_is_geometric_and_validated() {
        let g = log_grid(1e-3, 1e-1, 3).unwrap();
        assert_eq!(g.len(), 3);
        assert_abs_diff_eq!(g[0], 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(g[1], 1e-2, epsilon = 1e-16);
        assert_abs_diff_eq!(g[2], 1e-1, epsilon = 1e-15);
        assert!(log_grid(0.0, 1.0, 3).is_err());
        assert!(log_grid(1e-3, 1e-4, 3).is_err());
        assert!(log_grid(1e-3, 1e-1, 1).is_err());
    }
}
