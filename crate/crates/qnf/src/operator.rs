//! Dense complex operators and factorial series of them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix backing every operator.
pub type CMatrix = DMatrix<Complex64>;

/// Relative Hermiticity budget: a verified operator satisfies
/// defect <= HERMITICITY_RTOL * (1 + max_norm).
pub const HERMITICITY_RTOL: f64 = 1e-10;

/// A dense operator on the finite basis, with an optional record of
/// whether Hermiticity has been established.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    hermitian_hint: Option<bool>,
}

impl Operator {
    /// Wraps a square matrix without any Hermiticity claim.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                context: "Operator::new",
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        Ok(Operator {
            matrix,
            hermitian_hint: None,
        })
    }

    /// Wraps a matrix after verifying it is Hermitian within the
    /// scaled budget. `context` names the operator in error messages.
    pub fn hermitian(matrix: CMatrix, context: &str) -> Result<Self> {
        let mut op = Operator::new(matrix)?;
        let defect = op.hermitian_defect();
        let tolerance = HERMITICITY_RTOL * (1.0 + op.max_norm());
        if defect > tolerance {
            return Err(Error::NotHermitian {
                context: context.to_string(),
                defect,
                tolerance,
            });
        }
        op.hermitian_hint = Some(true);
        Ok(op)
    }

    pub fn zeros(dim: usize) -> Self {
        Operator {
            matrix: CMatrix::zeros(dim, dim),
            hermitian_hint: Some(true),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Operator {
            matrix: CMatrix::identity(dim, dim),
            hermitian_hint: Some(true),
        }
    }

    /// Diagonal operator with real entries; exactly Hermitian.
    pub fn from_real_diagonal(diagonal: &[f64]) -> Self {
        let dim = diagonal.len();
        let mut m = CMatrix::zeros(dim, dim);
        for (i, &v) in diagonal.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        Operator {
            matrix: m,
            hermitian_hint: Some(true),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermitian_hint(&self) -> Option<bool> {
        self.hermitian_hint
    }

    /// Largest entry magnitude.
    pub fn max_norm(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max-norm of A - A^dagger.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm();
                defect = defect.max(d);
            }
        }
        defect
    }

    pub fn is_hermitian_within(&self, tolerance: f64) -> bool {
        self.hermitian_defect() <= tolerance
    }

    /// Marks the operator Hermitian after an external proof; verifies first.
    pub fn assert_hermitian(mut self, context: &str) -> Result<Self> {
        let defect = self.hermitian_defect();
        let tolerance = HERMITICITY_RTOL * (1.0 + self.max_norm());
        if defect > tolerance {
            return Err(Error::NotHermitian {
                context: context.to_string(),
                defect,
                tolerance,
            });
        }
        self.hermitian_hint = Some(true);
        Ok(self)
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            matrix: self.matrix.adjoint(),
            hermitian_hint: self.hermitian_hint,
        }
    }

    /// Real scalar multiple; preserves Hermiticity.
    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            matrix: self.matrix.map(|z| z * factor),
            hermitian_hint: self.hermitian_hint,
        }
    }

    /// Complex scalar multiple; drops the Hermiticity claim unless real.
    pub fn scale_complex(&self, factor: Complex64) -> Operator {
        let hint = if factor.im == 0.0 {
            self.hermitian_hint
        } else {
            None
        };
        Operator {
            matrix: self.matrix.map(|z| z * factor),
            hermitian_hint: hint,
        }
    }

    /// Extracts the square sub-block at the given indices.
    pub fn sub_block(&self, indices: &[usize]) -> CMatrix {
        let d = indices.len();
        CMatrix::from_fn(d, d, |r, c| self.matrix[(indices[r], indices[c])])
    }

    pub(crate) fn from_parts(matrix: CMatrix, hermitian_hint: Option<bool>) -> Self {
        Operator {
            matrix,
            hermitian_hint,
        }
    }
}

fn combine_hints(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix + &rhs.matrix,
            hermitian_hint: combine_hints(self.hermitian_hint, rhs.hermitian_hint),
        }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix - &rhs.matrix,
            hermitian_hint: combine_hints(self.hermitian_hint, rhs.hermitian_hint),
        }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix * &rhs.matrix,
            hermitian_hint: None,
        }
    }
}

/// Commutator [A, B] = AB - BA.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "commutator",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(Operator::new(commutator_matrix(a.matrix(), b.matrix()))?)
}

pub(crate) fn commutator_matrix(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Adjoint action AD F(G) = (i/hbar) [F, G].
///
/// Hermitian F and G give a Hermitian result, and the hint records that.
pub fn ad(f: &Operator, g: &Operator, hbar: f64) -> Result<Operator> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            context: "ad",
            expected: f.dim(),
            found: g.dim(),
        });
    }
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(Error::InvalidHbar { value: hbar });
    }
    let hint = combine_hints(f.hermitian_hint(), g.hermitian_hint());
    Ok(Operator::from_parts(
        ad_matrix(f.matrix(), g.matrix(), hbar),
        hint,
    ))
}

pub(crate) fn ad_matrix(f: &CMatrix, g: &CMatrix, hbar: f64) -> CMatrix {
    commutator_matrix(f, g) * Complex64::new(0.0, 1.0 / hbar)
}

/// Coefficients of a factorial power series sum_p (eps^p / p!) A_p.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSeries {
    coefficients: Vec<Operator>,
    hbar: f64,
}

impl OperatorSeries {
    /// Coefficients A_0, A_1, ... over a common dimension.
    pub fn new(coefficients: Vec<Operator>, hbar: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::EmptySeries);
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidHbar { value: hbar });
        }
        let dim = coefficients[0].dim();
        for c in &coefficients[1..] {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "OperatorSeries::new",
                    expected: dim,
                    found: c.dim(),
                });
            }
        }
        Ok(OperatorSeries { coefficients, hbar })
    }

    pub fn dim(&self) -> usize {
        self.coefficients[0].dim()
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Highest stored order.
    pub fn max_order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Stored coefficient, or None beyond the highest order.
    pub fn coefficient(&self, p: usize) -> Option<&Operator> {
        self.coefficients.get(p)
    }

    /// Coefficient with absent orders read as zero.
    pub fn coefficient_or_zero(&self, p: usize) -> Operator {
        self.coefficients
            .get(p)
            .cloned()
            .unwrap_or_else(|| Operator::zeros(self.dim()))
    }

    /// Evaluates sum_p (eps^p / p!) A_p. At eps = 0 this returns A_0 exactly.
    pub fn eval(&self, epsilon: f64) -> Operator {
        eval_factorial(&self.coefficients, epsilon)
    }
}

/// Shared evaluator for factorial-weighted coefficient lists.
pub(crate) fn eval_factorial(coefficients: &[Operator], epsilon: f64) -> Operator {
    let mut acc = coefficients[0].matrix().clone();
    let mut weight = 1.0f64;
    let mut hint = coefficients[0].hermitian_hint();
    for (p, c) in coefficients.iter().enumerate().skip(1) {
        weight *= epsilon / p as f64;
        if weight == 0.0 {
            continue;
        }
        acc += c.matrix().map(|z| z * weight);
        hint = combine_hints(hint, c.hermitian_hint());
    }
    Operator::from_parts(acc, hint)
}

/// Evaluates a factorial series at epsilon. See [`OperatorSeries::eval`].
pub fn series_eval(series: &OperatorSeries, epsilon: f64) -> Operator {
    series.eval(epsilon)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues ascending and
/// eigenvector columns permuted to match. Tiny anti-Hermitian rounding in
/// the input is tolerated; only the Hermitian part informs the result.
pub fn sorted_hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
