//! Bundled example systems and the model file format.
//!
//! Ladder matrices are exact in the number basis, so the example
//! Hamiltonians are assembled by matrix products of truncated ladders.
//! Truncation only corrupts entries within the band width of the top
//! of the basis; interior matrix elements equal their untruncated values.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, Basis};
use crate::error::{Error, Result};
use crate::expansion::Expansion;
use crate::operator::{CMatrix, Operator, OperatorSeries};

/// A named Hamiltonian series together with its degeneracy structure.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub basis: Basis,
    pub hamiltonian: OperatorSeries,
    /// Construction parameters worth echoing in reports.
    pub parameters: Vec<(String, f64)>,
}

impl Model {
    /// Runs the normal form recursion on this model.
    pub fn expand(&self, order: usize) -> Result<Expansion> {
        Expansion::expand(&self.hamiltonian, &self.basis, order)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }
}

/// Lowering and raising matrices on the number basis 0..=n_max, with
/// matrix elements <n-1|a|n> = sqrt(n).
pub fn ladder(n_max: usize) -> (Operator, Operator) {
    let dim = n_max + 1;
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    let a = Operator::new(a).expect("square by construction");
    let a_dagger = a.adjoint();
    (a, a_dagger)
}

/// Default truncation giving exact order-`order` corrections for states
/// j <= j_max: the quartic band couples 4 quanta per order.
pub fn anharmonic_default_nmax(j_max: usize, order: usize) -> usize {
    (j_max + 8 * order + 8).max(60)
}

/// Default two-mode cutoff giving exact order-`order` corrections for
/// levels k <= k_max: the cubic band couples 3 quanta per order.
pub fn henon_heiles_default_cutoff(k_max: usize, order: usize) -> usize {
    (k_max + 3 * order + 6).max(14)
}

/// Quartic anharmonic oscillator: H0 = diag(j + 1/2), H1 = x^4 / 4 built
/// from the truncated ladder pair, hbar = 1.
///
/// Panics when n_max < 12; the quartic band needs that much room for any
/// interior state to exist.
pub fn anharmonic(n_max: usize) -> Model {
    assert!(n_max >= 12, "anharmonic needs n_max >= 12, got {n_max}");
    let dim = n_max + 1;
    let diagonal: Vec<f64> = (0..dim).map(|j| j as f64 + 0.5).collect();
    let h0 = Operator::from_real_diagonal(&diagonal);

    let (a, ad) = ladder(n_max);
    let x = (&a + &ad).scale(1.0 / 2.0_f64.sqrt());
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let h1 = x4
        .scale(0.25)
        .assert_hermitian("anharmonic H_1")
        .expect("product of symmetric real matrices");

    let basis = make_basis(&diagonal, 1e-9).expect("strictly increasing diagonal");
    let hamiltonian = OperatorSeries::new(vec![h0, h1], 1.0).expect("consistent dims");
    Model {
        name: "anharmonic".to_string(),
        basis,
        hamiltonian,
        parameters: vec![("n_max".to_string(), n_max as f64)],
    }
}

/// Two-mode number states (n1, n2) with n1 + n2 <= cutoff, ordered by
/// total quanta then n1 ascending.
pub fn two_mode_states(cutoff: usize) -> Vec<(usize, usize)> {
    let mut states = Vec::with_capacity((cutoff + 1) * (cutoff + 2) / 2);
    for k in 0..=cutoff {
        for n1 in 0..=k {
            states.push((n1, k - n1));
        }
    }
    states
}

/// Henon-Heiles system on the triangular two-mode basis:
/// H0 = N1 + N2 + 1, H1 = alpha x1^2 x2 + beta x2^3, hbar = 1.
///
/// Single-mode position powers are built from the truncated ladder on
/// 0..=cutoff and tensored onto the triangle, so H1 is exactly Hermitian
/// and commutes with the x1-parity grading.
///
/// Panics when cutoff < 8; the cubic band needs that much room.
pub fn henon_heiles(cutoff: usize, alpha: f64, beta: f64) -> Model {
    assert!(cutoff >= 8, "henon_heiles needs cutoff >= 8, got {cutoff}");
    assert!(
        alpha.is_finite() && beta.is_finite(),
        "alpha and beta must be finite"
    );

    let states = two_mode_states(cutoff);
    let dim = states.len();
    let diagonal: Vec<f64> = states.iter().map(|&(n1, n2)| (n1 + n2) as f64 + 1.0).collect();
    let h0 = Operator::from_real_diagonal(&diagonal);

    let (a, ad) = ladder(cutoff);
    let x = (&a + &ad).scale(1.0 / 2.0_f64.sqrt());
    let x2 = &x * &x;
    // x^2 x^2 is bitwise symmetric on its own; the odd power is not, so
    // average the two orderings (addition commutes bitwise).
    let x3 = (&(&x2 * &x) + &(&x * &x2)).scale(0.5);
    let (x1m, x2m, x3m) = (x.matrix(), x2.matrix(), x3.matrix());

    let mut h1 = CMatrix::zeros(dim, dim);
    for (r, &(m1, m2)) in states.iter().enumerate() {
        for (c, &(n1, n2)) in states.iter().enumerate() {
            let mut v = x2m[(m1, n1)] * x1m[(m2, n2)] * alpha;
            if m1 == n1 {
                v += x3m[(m2, n2)] * beta;
            }
            h1[(r, c)] = v;
        }
    }
    let h1 = Operator::new(h1)
        .expect("square by construction")
        .assert_hermitian("henon_heiles H_1")
        .expect("tensor product of symmetric factors");

    let basis = make_basis(&diagonal, 1e-9).expect("integer level energies");
    let hamiltonian = OperatorSeries::new(vec![h0, h1], 1.0).expect("consistent dims");
    Model {
        name: "henon-heiles".to_string(),
        basis,
        hamiltonian,
        parameters: vec![
            ("cutoff".to_string(), cutoff as f64),
            ("alpha".to_string(), alpha),
            ("beta".to_string(), beta),
        ],
    }
}

fn default_hbar() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    1e-9
}

/// On-disk model schema: a name, the H0 diagonal, and row-major complex
/// perturbation matrices keyed by their order.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    #[serde(default = "default_hbar")]
    hbar: f64,
    h0_diagonal: Vec<f64>,
    #[serde(default = "default_tolerance")]
    degeneracy_tolerance: f64,
    #[serde(default)]
    perturbations: BTreeMap<String, Vec<Vec<[f64; 2]>>>,
}

/// Parses a model from its JSON text. See [`load_model`].
pub fn model_from_json(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.name.is_empty() {
        return Err(Error::ModelField {
            field: "name".to_string(),
            detail: "must not be empty".to_string(),
        });
    }
    if !(file.hbar.is_finite() && file.hbar > 0.0) {
        return Err(Error::ModelField {
            field: "hbar".to_string(),
            detail: format!("must be positive and finite, got {}", file.hbar),
        });
    }
    let dim = file.h0_diagonal.len();
    let basis = make_basis(&file.h0_diagonal, file.degeneracy_tolerance)?;

    let mut orders: BTreeMap<usize, Operator> = BTreeMap::new();
    for (key, rows) in &file.perturbations {
        let p: usize = key.parse().map_err(|_| Error::ModelField {
            field: format!("perturbations.{key}"),
            detail: "key must be a positive integer order".to_string(),
        })?;
        if p == 0 {
            return Err(Error::ModelField {
                field: "perturbations.0".to_string(),
                detail: "order 0 belongs in h0_diagonal".to_string(),
            });
        }
        if rows.len() != dim {
            return Err(Error::ModelField {
                field: format!("perturbations.{key}"),
                detail: format!("has {} rows, expected {dim}", rows.len()),
            });
        }
        let mut m = CMatrix::zeros(dim, dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ModelField {
                    field: format!("perturbations.{key}[{r}]"),
                    detail: format!("has {} entries, expected {dim}", row.len()),
                });
            }
            for (c, &[re, im]) in row.iter().enumerate() {
                if !(re.is_finite() && im.is_finite()) {
                    return Err(Error::ModelField {
                        field: format!("perturbations.{key}[{r}][{c}]"),
                        detail: "entries must be finite".to_string(),
                    });
                }
                m[(r, c)] = Complex64::new(re, im);
            }
        }
        let op = Operator::hermitian(m, &format!("perturbations.{key}"))?;
        orders.insert(p, op);
    }

    let max_order = orders.keys().max().copied().unwrap_or(0);
    let mut coefficients = Vec::with_capacity(max_order + 1);
    coefficients.push(Operator::from_real_diagonal(&file.h0_diagonal));
    for p in 1..=max_order {
        coefficients.push(
            orders
                .remove(&p)
                .unwrap_or_else(|| Operator::zeros(dim)),
        );
    }
    let hamiltonian = OperatorSeries::new(coefficients, file.hbar)?;

    Ok(Model {
        name: file.name,
        basis,
        hamiltonian,
        parameters: Vec::new(),
    })
}

/// Serializes a model to the JSON schema, skipping all-zero orders.
pub fn model_to_json(model: &Model) -> String {
    let h = &model.hamiltonian;
    let dim = h.dim();
    let h0 = h.coefficient(0).expect("series is nonempty");
    let h0_diagonal: Vec<f64> = (0..dim).map(|i| h0.matrix()[(i, i)].re).collect();

    let mut perturbations = BTreeMap::new();
    for p in 1..=h.max_order() {
        let c = h.coefficient(p).expect("order within range");
        if c.max_norm() == 0.0 {
            continue;
        }
        let rows: Vec<Vec<[f64; 2]>> = (0..dim)
            .map(|r| {
                (0..dim)
                    .map(|u| {
                        let z = c.matrix()[(r, u)];
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect();
        perturbations.insert(p.to_string(), rows);
    }

    let file = ModelFile {
        name: model.name.clone(),
        hbar: h.hbar(),
        h0_diagonal,
        degeneracy_tolerance: model.basis.tolerance(),
        perturbations,
    };
    serde_json::to_string_pretty(&file).expect("schema serializes")
}

/// Reads a model file from disk.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_json(&text)
}

/// Writes a model file to disk.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
