//! Order-N normal form of a perturbed self-adjoint operator.
//!
//! Given H(eps) = sum_p (eps^p / p!) H_p with diagonal H_0, the expansion
//! produces generator coefficients W_p, block-diagonal normal form
//! coefficients K_p, and the wave operator coefficients Phi_p, all tied
//! together by the order-by-order homological equations. Superoperators are
//! never materialized; only their applications to concrete operators are
//! computed, and repeated applications are memoized by (depth, source order).

use std::collections::BTreeMap;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::averaging::{average, off_block_norm, s_map};
use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::operator::{
    ad_matrix, eval_factorial, sorted_hermitian_eigen, CMatrix, Operator, OperatorSeries,
    HERMITICITY_RTOL,
};

/// Largest supported expansion order. Binomial weights stay exact integers
/// well past this, but coefficient growth makes higher orders useless in
/// double precision.
pub const MAX_ORDER: usize = 12;

/// Relative budget for the block-diagonality of gauge terms.
const GAUGE_BLOCK_RTOL: f64 = 1e-12;

/// Exact binomial coefficient. Both arguments stay tiny (n <= MAX_ORDER),
/// so u128 intermediate products cannot overflow.
pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// n! as f64, exact for n <= 18.
pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Eigen data of one degenerate block at a fixed epsilon.
#[derive(Debug, Clone)]
pub struct LevelEigen {
    /// Level index in the basis.
    pub level: usize,
    /// Unperturbed level energy.
    pub energy0: f64,
    /// Block eigenvalues, ascending.
    pub values: Vec<f64>,
    /// d x d unitary whose columns mix the degenerate states;
    /// the 1 x 1 identity for simple levels.
    pub mixing: CMatrix,
    /// Normalized approximate eigenvectors in the full space.
    pub vectors: Vec<DVector<Complex64>>,
    /// || H(eps) v - E v || per state.
    pub residuals: Vec<f64>,
}

/// Approximate spectrum of H(eps) through the normal form at one epsilon.
#[derive(Debug, Clone)]
pub struct EigenReport {
    pub epsilon: f64,
    pub order: usize,
    /// Per level, in ascending unperturbed energy order.
    pub levels: Vec<LevelEigen>,
}

impl EigenReport {
    /// Eigenvalues flattened in (level, ascending-within-level) order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.values.clone()).collect()
    }

    /// Residuals flattened in the same order as [`Self::flat_values`].
    pub fn flat_residuals(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| l.residuals.clone())
            .collect()
    }

    /// Vectors flattened in the same order as [`Self::flat_values`].
    pub fn flat_vectors(&self) -> Vec<&DVector<Complex64>> {
        self.levels.iter().flat_map(|l| l.vectors.iter()).collect()
    }

    /// Total number of states.
    pub fn state_count(&self) -> usize {
        self.levels.iter().map(|l| l.values.len()).sum()
    }
}

/// The normal form data of one Hamiltonian series at one order.
#[derive(Debug, Clone)]
pub struct Expansion {
    basis: Basis,
    h: OperatorSeries,
    order: usize,
    /// F_p for p = 1..=order at index p-1.
    f_terms: Vec<Operator>,
    /// W_p for p = 1..=order at index p-1, gauge included.
    w_terms: Vec<Operator>,
    /// K_p for p = 0..=order at index p.
    k_terms: Vec<Operator>,
    /// Phi_p for p = 0..=order at index p.
    phi_terms: Vec<Operator>,
    /// Memoized T_q(H_m) applications keyed by (q, m).
    t_cache: BTreeMap<(usize, usize), CMatrix>,
}

/// Runs the averaging recursion to the requested order. See [`Expansion::expand`].
pub fn expand(h: &OperatorSeries, basis: &Basis, order: usize) -> Result<Expansion> {
    Expansion::expand(h, basis, order)
}

impl Expansion {
    /// Runs the averaging recursion to the requested order with the
    /// canonical gauge choice average(W_p) = 0.
    pub fn expand(h: &OperatorSeries, basis: &Basis, order: usize) -> Result<Self> {
        Self::with_gauge(h, basis, order, &[])
    }

    /// Same as [`Self::expand`], but shifts W_p by the given gauge terms.
    /// Each gauge operator must be Hermitian and block diagonal (so that it
    /// commutes with the exactly degenerate H0); the normal form then
    /// differs, while its spectral predictions agree to the expansion order.
    pub fn with_gauge(
        h: &OperatorSeries,
        basis: &Basis,
        order: usize,
        gauge: &[(usize, Operator)],
    ) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::OrderTooLarge {
                order,
                max: MAX_ORDER,
            });
        }
        let dim = basis.dim();
        if h.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "expand",
                expected: dim,
                found: h.dim(),
            });
        }
        let hbar = h.hbar();

        let h0 = h.coefficient_or_zero(0);
        for r in 0..dim {
            for c in 0..dim {
                if r != c && h0.matrix()[(r, c)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::H0NotDiagonal { row: r, col: c });
                }
            }
        }
        let level_diag = basis.to_diagonal();
        for i in 0..dim {
            let raw = h0.matrix()[(i, i)].re;
            if (raw - level_diag[i]).abs() > basis.tolerance() {
                return Err(Error::BasisMismatch {
                    index: i,
                    diagonal: raw,
                    level_energy: level_diag[i],
                    tolerance: basis.tolerance(),
                });
            }
        }
        for p in 1..=h.max_order() {
            let c = h.coefficient(p).expect("order within range");
            let tol = HERMITICITY_RTOL * (1.0 + c.max_norm());
            if !c.is_hermitian_within(tol) {
                return Err(Error::NotHermitian {
                    context: format!("H_{p}"),
                    defect: c.hermitian_defect(),
                    tolerance: tol,
                });
            }
        }

        let mut gauge_map: BTreeMap<usize, &Operator> = BTreeMap::new();
        for (p, v) in gauge {
            if *p == 0 || *p > order {
                return Err(Error::GaugeOrderOutOfRange {
                    order: *p,
                    max: order,
                });
            }
            if gauge_map.insert(*p, v).is_some() {
                return Err(Error::GaugeDuplicate { order: *p });
            }
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "gauge term",
                    expected: dim,
                    found: v.dim(),
                });
            }
            let tol = HERMITICITY_RTOL * (1.0 + v.max_norm());
            if !v.is_hermitian_within(tol) {
                return Err(Error::NotHermitian {
                    context: format!("gauge term at order {p}"),
                    defect: v.hermitian_defect(),
                    tolerance: tol,
                });
            }
            let off = off_block_norm(v, basis)?;
            if off > GAUGE_BLOCK_RTOL * (1.0 + v.max_norm()) {
                return Err(Error::GaugeNotBlockDiagonal {
                    order: *p,
                    defect: off,
                });
            }
        }

        let mut f_terms: Vec<Operator> = Vec::with_capacity(order);
        let mut w_terms: Vec<Operator> = Vec::with_capacity(order);
        let mut k_terms: Vec<Operator> = Vec::with_capacity(order + 1);
        let mut t_cache: BTreeMap<(usize, usize), CMatrix> = BTreeMap::new();
        k_terms.push(h0);

        for p in 1..=order {
            let mut f = h.coefficient_or_zero(p).into_matrix();
            if p >= 2 {
                for l in 0..=(p - 2) {
                    let weight = binomial(p - 1, l) as f64;
                    let adw = ad_matrix(
                        w_terms[l].matrix(),
                        k_terms[p - l - 1].matrix(),
                        hbar,
                    );
                    let t = t_apply_cached(&mut t_cache, &w_terms, h, p - l - 1, l + 1, hbar);
                    f += (adw + t).map(|z| z * weight);
                }
            }
            let f_op = Operator::new(f)?.assert_hermitian(&format!("F_{p}"))?;
            let mut w = s_map(&f_op, basis, hbar)?;
            if let Some(v) = gauge_map.get(&p) {
                w = &w + v;
            }
            let k = average(&f_op, basis)?;
            f_terms.push(f_op);
            w_terms.push(w);
            k_terms.push(k);
        }

        let minus_i_over_hbar = Complex64::new(0.0, -1.0 / hbar);
        let mut phi_terms: Vec<Operator> = Vec::with_capacity(order + 1);
        phi_terms.push(Operator::identity(dim));
        for p in 0..order {
            let mut acc = CMatrix::zeros(dim, dim);
            for l in 0..=p {
                let weight = binomial(p, l) as f64;
                acc += (phi_terms[p - l].matrix() * w_terms[l].matrix()).map(|z| z * weight);
            }
            phi_terms.push(Operator::new(acc.map(|z| z * minus_i_over_hbar))?);
        }

        Ok(Expansion {
            basis: basis.clone(),
            h: h.clone(),
            order,
            f_terms,
            w_terms,
            k_terms,
            phi_terms,
            t_cache,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn hbar(&self) -> f64 {
        self.h.hbar()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// The input series.
    pub fn hamiltonian(&self) -> &OperatorSeries {
        &self.h
    }

    /// F_p for 1 <= p <= order.
    ///
    /// Panics when p is out of range.
    pub fn f_term(&self, p: usize) -> &Operator {
        assert!(p >= 1 && p <= self.order, "f_term order {p} out of range");
        &self.f_terms[p - 1]
    }

    /// W_p for 1 <= p <= order, gauge included.
    ///
    /// Panics when p is out of range.
    pub fn w_term(&self, p: usize) -> &Operator {
        assert!(p >= 1 && p <= self.order, "w_term order {p} out of range");
        &self.w_terms[p - 1]
    }

    /// K_p for 0 <= p <= order.
    ///
    /// Panics when p is out of range.
    pub fn k_term(&self, p: usize) -> &Operator {
        assert!(p <= self.order, "k_term order {p} out of range");
        &self.k_terms[p]
    }

    /// Phi_p for 0 <= p <= order.
    ///
    /// Panics when p is out of range.
    pub fn phi_term(&self, p: usize) -> &Operator {
        assert!(p <= self.order, "phi_term order {p} out of range");
        &self.phi_terms[p]
    }

    /// Applies the transport superoperator: T_q applied to H_m.
    ///
    /// T_0 is the identity; deeper applications nest the adjoint action of
    /// the generators. Pairs visited during construction are served from the
    /// memo table; anything else is recomputed on the fly. Requires q <=
    /// order so every needed generator exists.
    pub fn apply_t(&self, q: usize, m: usize) -> Result<Operator> {
        if q > self.order {
            return Err(Error::OrderTooLarge {
                order: q,
                max: self.order,
            });
        }
        let matrix = t_apply_readonly(&self.t_cache, &self.w_terms, &self.h, q, m, self.hbar());
        Operator::new(matrix)
    }

    /// K^N(eps): the truncated normal form, exactly block diagonal.
    pub fn k_truncated(&self, epsilon: f64) -> Operator {
        eval_factorial(&self.k_terms, epsilon)
    }

    /// Phi^N(eps): the truncated wave operator, unitary up to O(eps^(N+1)).
    pub fn phi_truncated(&self, epsilon: f64) -> Operator {
        eval_factorial(&self.phi_terms, epsilon)
    }

    /// Coefficients of the eigenvalue polynomial of a simple level:
    /// E_j(eps) = sum_p c_p eps^p with c_p = (K_p)_jj / p!.
    /// Returns None for degenerate levels, whose eigenvalues are not
    /// polynomial in epsilon.
    pub fn eigenvalue_coefficients(&self, level: usize) -> Option<Vec<f64>> {
        if self.basis.degeneracy(level) != 1 {
            return None;
        }
        let j = self.basis.level_indices(level)[0];
        Some(
            self.k_terms
                .iter()
                .enumerate()
                .map(|(p, k)| k.matrix()[(j, j)].re / factorial(p))
                .collect(),
        )
    }

    /// Diagonalizes each block of K^N(eps) and transports the block
    /// eigenvectors with Phi^N(eps).
    ///
    /// Simple levels bypass the solver: their value is the real diagonal
    /// entry and the mixing is the 1 x 1 identity.
    pub fn eigen_report(&self, epsilon: f64) -> Result<EigenReport> {
        if !epsilon.is_finite() {
            return Err(Error::InvalidEpsilon {
                index: 0,
                value: epsilon,
            });
        }
        let dim = self.dim();
        let k_eps = self.k_truncated(epsilon);
        let phi_eps = self.phi_truncated(epsilon);
        let h_eps = self.h.eval(epsilon);

        let mut levels = Vec::with_capacity(self.basis.level_count());
        for li in 0..self.basis.level_count() {
            let idx = self.basis.level_indices(li);
            let d = idx.len();
            let (values, mixing) = if d == 1 {
                let e = k_eps.matrix()[(idx[0], idx[0])].re;
                (vec![e], CMatrix::identity(1, 1))
            } else {
                let block = k_eps.sub_block(idx);
                sorted_hermitian_eigen(&block)
            };

            let mut vectors = Vec::with_capacity(d);
            let mut residuals = Vec::with_capacity(d);
            for a in 0..d {
                let mut seed = DVector::<Complex64>::zeros(dim);
                for (r, &i) in idx.iter().enumerate() {
                    seed[i] = mixing[(r, a)];
                }
                let mut v = phi_eps.matrix() * seed;
                let norm = v.norm();
                if norm > 0.0 {
                    v.unscale_mut(norm);
                }
                let residual = (h_eps.matrix() * &v - v.map(|z| z * values[a])).norm();
                vectors.push(v);
                residuals.push(residual);
            }

            levels.push(LevelEigen {
                level: li,
                energy0: self.basis.energy(li),
                values,
                mixing,
                vectors,
                residuals,
            });
        }

        Ok(EigenReport {
            epsilon,
            order: self.order,
            levels,
        })
    }

    /// Eigenvector residuals || H(eps) v - E v ||, flattened in
    /// (level, ascending-within-level) order.
    pub fn residual_norms(&self, epsilon: f64) -> Result<Vec<f64>> {
        Ok(self.eigen_report(epsilon)?.flat_residuals())
    }
}

/// T recursion used during construction; fills the memo table.
fn t_apply_cached(
    cache: &mut BTreeMap<(usize, usize), CMatrix>,
    w_terms: &[Operator],
    h: &OperatorSeries,
    q: usize,
    m: usize,
    hbar: f64,
) -> CMatrix {
    if q == 0 {
        return h.coefficient_or_zero(m).into_matrix();
    }
    if let Some(hit) = cache.get(&(q, m)) {
        return hit.clone();
    }
    let dim = h.dim();
    let mut acc = CMatrix::zeros(dim, dim);
    for l in 0..=(q - 1) {
        let inner = t_apply_cached(cache, w_terms, h, q - 1 - l, m, hbar);
        let weight = binomial(q - 1, l) as f64;
        acc += ad_matrix(w_terms[l].matrix(), &inner, hbar).map(|z| z * weight);
    }
    cache.insert((q, m), acc.clone());
    acc
}

/// T recursion over a frozen memo table; recomputes misses without inserting.
fn t_apply_readonly(
    cache: &BTreeMap<(usize, usize), CMatrix>,
    w_terms: &[Operator],
    h: &OperatorSeries,
    q: usize,
    m: usize,
    hbar: f64,
) -> CMatrix {
    if q == 0 {
        return h.coefficient_or_zero(m).into_matrix();
    }
    if let Some(hit) = cache.get(&(q, m)) {
        return hit.clone();
    }
    let dim = h.dim();
    let mut acc = CMatrix::zeros(dim, dim);
    for l in 0..=(q - 1) {
        let inner = t_apply_readonly(cache, w_terms, h, q - 1 - l, m, hbar);
        let weight = binomial(q - 1, l) as f64;
        acc += ad_matrix(w_terms[l].matrix(), &inner, hbar).map(|z| z * weight);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{average, off_block_norm};
    use crate::basis::make_basis;
    use crate::operator::ad;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binomials_are_exact() {
        assert_eq!(binomial(0, 0), 1);
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(11, 5), 462);
        assert_eq!(binomial(12, 6), 924);
        assert_eq!(binomial(3, 7), 0);
        let mut row_sum = 0u128;
        for k in 0..=12 {
            row_sum += binomial(12, k);
        }
        assert_eq!(row_sum, 1 << 12);
    }

    #[test]
    fn factorials_are_exact() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert_eq!(factorial(12), 479_001_600.0);
    }

    fn two_level() -> (Basis, OperatorSeries) {
        // H0 = diag(0, 1), H1 = sigma_x.
        let basis = make_basis(&[0.0, 1.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0]);
        let h1 = Operator::hermitian(
            CMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(0.0, 0.0),
                    Complex64::new(1.0, 0.0),
                    Complex64::new(1.0, 0.0),
                    Complex64::new(0.0, 0.0),
                ],
            ),
            "sigma_x",
        )
        .unwrap();
        let h = OperatorSeries::new(vec![h0, h1], 1.0).unwrap();
        (basis, h)
    }

    #[test]
    fn zero_perturbation_is_trivial_to_any_order() {
        let basis = make_basis(&[0.0, 1.0, 2.5], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0, 2.5]);
        let h = OperatorSeries::new(vec![h0.clone()], 1.0).unwrap();
        let exp = Expansion::expand(&h, &basis, 4).unwrap();
        for p in 1..=4 {
            assert_eq!(exp.f_term(p).max_norm(), 0.0);
            assert_eq!(exp.w_term(p).max_norm(), 0.0);
            assert_eq!(exp.k_term(p).max_norm(), 0.0);
            assert_eq!(exp.phi_term(p).max_norm(), 0.0);
        }
        let report = exp.eigen_report(0.7).unwrap();
        assert_eq!(report.flat_values(), vec![0.0, 1.0, 2.5]);
        assert_eq!(report.flat_residuals(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_level_order_two_matches_closed_form() {
        // K2 = avg(ad(W1, K1 + H1)) with K1 = avg(sigma_x) = 0:
        // W1 = [[0, i], [-i, 0]], ad(W1, H1) = i[W1, H1] = diag(-2, 2),
        // so K2 = diag(-2, 2) and E(eps) ~ -eps^2 for the lower state,
        // matching (1 - sqrt(1 + 4 eps^2)) / 2 to order 2.
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 2).unwrap();
        assert_eq!(exp.k_term(1).max_norm(), 0.0);
        let k2 = exp.k_term(2);
        assert_abs_diff_eq!(k2.matrix()[(0, 0)].re, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(k2.matrix()[(1, 1)].re, 2.0, epsilon = 1e-14);
        assert!(k2.matrix()[(0, 1)].norm() < 1e-15);

        let coeffs = exp.eigenvalue_coefficients(0).unwrap();
        assert_eq!(coeffs[0], 0.0);
        assert_eq!(coeffs[1], 0.0);
        assert_abs_diff_eq!(coeffs[2], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn two_level_order_four_matches_exact_series() {
        // Exact lower eigenvalue (1 - sqrt(1 + 4 eps^2)) / 2
        //   = -eps^2 + eps^4 + O(eps^6).
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 4).unwrap();
        let coeffs = exp.eigenvalue_coefficients(0).unwrap();
        assert_abs_diff_eq!(coeffs[2], -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(coeffs[3], 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(coeffs[4], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn apply_t_unrolls_match_definitions() {
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 3).unwrap();
        let hbar = 1.0;

        // T_0(H_1) = H_1.
        let t0 = exp.apply_t(0, 1).unwrap();
        assert_eq!(t0.matrix(), h.coefficient(1).unwrap().matrix());

        // T_1(H_1) = AD W_1(H_1).
        let t1 = exp.apply_t(1, 1).unwrap();
        let expect1 = ad(exp.w_term(1), h.coefficient(1).unwrap(), hbar).unwrap();
        assert!((&t1 - &expect1).max_norm() < 1e-14);

        // T_2(H_1) = AD W_1(AD W_1(H_1)) + AD W_2(H_1).
        let t2 = exp.apply_t(2, 1).unwrap();
        let inner = ad(exp.w_term(1), h.coefficient(1).unwrap(), hbar).unwrap();
        let expect2 = &ad(exp.w_term(1), &inner, hbar).unwrap()
            + &ad(exp.w_term(2), h.coefficient(1).unwrap(), hbar).unwrap();
        assert!((&t2 - &expect2).max_norm() < 1e-13);

        // T of a missing order is zero.
        let t_missing = exp.apply_t(1, 5).unwrap();
        assert_eq!(t_missing.max_norm(), 0.0);

        // Depth beyond the expansion order is rejected.
        assert!(matches!(
            exp.apply_t(4, 1),
            Err(Error::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn invariants_hold_per_order() {
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 4).unwrap();
        let h0 = basis.h0();
        for p in 1..=4 {
            // Hermiticity of every coefficient family.
            assert!(exp.f_term(p).hermitian_defect() < 1e-12);
            assert!(exp.w_term(p).hermitian_defect() < 1e-12);
            assert!(exp.k_term(p).hermitian_defect() < 1e-12);
            // K_p commutes with H0 and is the block average of F_p.
            assert!(
                crate::operator::commutator(&h0, exp.k_term(p))
                    .unwrap()
                    .max_norm()
                    < 1e-13
            );
            assert_eq!(
                average(exp.f_term(p), &basis).unwrap().matrix(),
                exp.k_term(p).matrix()
            );
            // Canonical gauge averages to zero, exactly.
            assert_eq!(
                average(exp.w_term(p), &basis).unwrap().max_norm(),
                0.0
            );
            // Homological equation at order p: ad(W_p, H0) + F_p - K_p = 0.
            let resid = (&(&ad(exp.w_term(p), &h0, 1.0).unwrap() + exp.f_term(p))
                - exp.k_term(p))
                .max_norm();
            assert!(resid < 1e-13, "order {p} homological residual {resid}");
        }
    }

    #[test]
    fn phi_coefficients_unroll() {
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 3).unwrap();
        let mi = Complex64::new(0.0, -1.0);

        // Phi_1 = -i W_1.
        let expect1 = exp.w_term(1).scale_complex(mi);
        assert!((&exp.phi_term(1).clone() - &expect1).max_norm() < 1e-15);

        // Phi_2 = -i (Phi_1 W_1 + W_2).
        let p1w1 = exp.phi_term(1) * exp.w_term(1);
        let expect2 = (&p1w1 + exp.w_term(2)).scale_complex(mi);
        assert!((&exp.phi_term(2).clone() - &expect2).max_norm() < 1e-14);

        // Phi_3 = -i (Phi_2 W_1 + 2 Phi_1 W_2 + W_3).
        let a = exp.phi_term(2) * exp.w_term(1);
        let b = (exp.phi_term(1) * exp.w_term(2)).scale(2.0);
        let expect3 = (&(&a + &b) + exp.w_term(3)).scale_complex(mi);
        assert!((&exp.phi_term(3).clone() - &expect3).max_norm() < 1e-14);
    }

    #[test]
    fn truncated_series_evaluate_with_factorial_weights() {
        let (basis, h) = two_level();
        let exp = Expansion::expand(&h, &basis, 2).unwrap();
        let eps = 0.3;
        let k = exp.k_truncated(eps);
        let expect = &(&exp.k_term(0).clone() + &exp.k_term(1).scale(eps))
            + &exp.k_term(2).scale(eps * eps / 2.0);
        assert!((&k - &expect).max_norm() < 1e-15);

        // K^N(eps) stays exactly block diagonal.
        assert_eq!(off_block_norm(&k, &basis).unwrap(), 0.0);

        let phi0 = exp.phi_truncated(0.0);
        assert_eq!(phi0.matrix(), Operator::identity(2).matrix());
    }

    #[test]
    fn eigen_report_at_zero_returns_unperturbed_data() {
        let basis = make_basis(&[0.0, 1.0, 1.0, 2.0], 1e-9).unwrap();
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0, 1.0, 2.0]);
        let h1 = {
            let m = CMatrix::from_fn(4, 4, |r, c| {
                Complex64::new(0.1 * (r + c) as f64, 0.05 * (r as f64 - c as f64))
            });
            (&Operator::new(m.clone()).unwrap() + &Operator::new(m).unwrap().adjoint())
                .assert_hermitian("h1")
                .unwrap()
        };
        let h = OperatorSeries::new(vec![h0, h1], 1.0).unwrap();
        let exp = Expansion::expand(&h, &basis, 2).unwrap();
        let report = exp.eigen_report(0.0).unwrap();
        assert_eq!(report.flat_values(), vec![0.0, 1.0, 1.0, 2.0]);
        for r in report.flat_residuals() {
            assert_eq!(r, 0.0);
        }
        assert_eq!(report.levels[0].mixing, CMatrix::identity(1, 1));
        assert_eq!(report.levels[1].values.len(), 2);
    }

    #[test]
    fn gauge_shift_preserves_simple_eigenvalues() {
        // Diagonal gauge terms commute with H0; for a nondegenerate basis
        // every K_p diagonal entry is gauge independent.
        let (basis, h) = two_level();
        let base = Expansion::expand(&h, &basis, 4).unwrap();
        let v = Operator::from_real_diagonal(&[0.37, -0.21]);
        let gauged = Expansion::with_gauge(&h, &basis, 4, &[(1, v)]).unwrap();
        for level in 0..2 {
            let a = base.eigenvalue_coefficients(level).unwrap();
            let b = gauged.eigenvalue_coefficients(level).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
        }
        // The generators themselves do differ.
        assert!((&gauged.w_term(1).clone() - base.w_term(1)).max_norm() > 0.1);
    }

    #[test]
    fn gauge_validation_rejects_bad_terms() {
        let (basis, h) = two_level();
        let off_block = Operator::hermitian(
            CMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(0.0, 0.0),
                    Complex64::new(0.5, 0.0),
                    Complex64::new(0.5, 0.0),
                    Complex64::new(0.0, 0.0),
                ],
            ),
            "v",
        )
        .unwrap();
        assert!(matches!(
            Expansion::with_gauge(&h, &basis, 2, &[(1, off_block)]),
            Err(Error::GaugeNotBlockDiagonal { .. })
        ));
        let v = Operator::from_real_diagonal(&[1.0, 2.0]);
        assert!(matches!(
            Expansion::with_gauge(&h, &basis, 2, &[(0, v.clone())]),
            Err(Error::GaugeOrderOutOfRange { .. })
        ));
        assert!(matches!(
            Expansion::with_gauge(&h, &basis, 2, &[(1, v.clone()), (1, v)]),
            Err(Error::GaugeDuplicate { .. })
        ));
    }

    #[test]
    fn input_validation_rejects_bad_series() {
        let basis = make_basis(&[0.0, 1.0], 1e-9).unwrap();
        // Off-diagonal H0.
        let h0 = Operator::hermitian(
            CMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(0.0, 0.0),
                    Complex64::new(0.1, 0.0),
                    Complex64::new(0.1, 0.0),
                    Complex64::new(1.0, 0.0),
                ],
            ),
            "h0",
        )
        .unwrap();
        let h = OperatorSeries::new(vec![h0], 1.0).unwrap();
        assert!(matches!(
            Expansion::expand(&h, &basis, 1),
            Err(Error::H0NotDiagonal { .. })
        ));

        // H0 inconsistent with the basis energies.
        let h0 = Operator::from_real_diagonal(&[0.0, 5.0]);
        let h = OperatorSeries::new(vec![h0], 1.0).unwrap();
        assert!(matches!(
            Expansion::expand(&h, &basis, 1),
            Err(Error::BasisMismatch { .. })
        ));

        // Non-Hermitian perturbation.
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0]);
        let h1 = Operator::new(CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        ))
        .unwrap();
        let h = OperatorSeries::new(vec![h0, h1], 1.0).unwrap();
        match Expansion::expand(&h, &basis, 1) {
            Err(Error::NotHermitian { context, .. }) => assert_eq!(context, "H_1"),
            other => panic!("expected NotHermitian, got {other:?}"),
        }

        // Order cap.
        let h0 = Operator::from_real_diagonal(&[0.0, 1.0]);
        let h = OperatorSeries::new(vec![h0], 1.0).unwrap();
        assert!(matches!(
            Expansion::expand(&h, &basis, MAX_ORDER + 1),
            Err(Error::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn hbar_drops_out_of_the_normal_form() {
        // W_p carries hbar, but every K_p is hbar free.
        let (basis, h1_series) = two_level();
        let h0 = h1_series.coefficient(0).unwrap().clone();
        let h1 = h1_series.coefficient(1).unwrap().clone();
        let exp_a = Expansion::expand(
            &OperatorSeries::new(vec![h0.clone(), h1.clone()], 1.0).unwrap(),
            &basis,
            4,
        )
        .unwrap();
        let exp_b = Expansion::expand(
            &OperatorSeries::new(vec![h0, h1], 0.31).unwrap(),
            &basis,
            4,
        )
        .unwrap();
        for p in 0..=4 {
            let diff = (&exp_a.k_term(p).clone() - exp_b.k_term(p)).max_norm();
            assert!(diff < 1e-12, "K_{p} depends on hbar: {diff}");
        }
    }
}
