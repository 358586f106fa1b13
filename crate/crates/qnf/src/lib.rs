//! Normal forms of perturbed self-adjoint operators by quantum averaging.
//!
//! The crate expands a Hamiltonian series H(eps) = sum_p (eps^p / p!) H_p
//! with discrete unperturbed spectrum into a unitarily equivalent normal
//! form K(eps) that commutes with H_0 order by order. Degenerate blocks of
//! the truncated normal form are then diagonalized exactly, giving
//! eigenvalue and eigenvector expansions together with a certification
//! suite that checks the structural identities of the construction and its
//! term-by-term agreement with textbook perturbation theory.
//!
//! Entry points:
//!
//! - [`basis::make_basis`] groups an unperturbed diagonal into degenerate
//!   levels.
//! - [`expansion::Expansion::expand`] runs the averaging recursion to a
//!   requested order.
//! - [`expansion::Expansion::eigen_report`] turns the normal form into
//!   spectral data at a concrete epsilon.
//! - [`models`] builds the bundled example systems and reads model files.
//! - [`oracle`] holds the independent cross-checks (direct perturbation
//!   sums, exact diagonalization, convergence-slope fits).
//! - [`verify`] drives the randomized certification suite.

pub mod averaging;
pub mod basis;
pub mod error;
pub mod expansion;
pub mod models;
pub mod operator;
pub mod oracle;
pub mod verify;

pub use basis::{make_basis, Basis, Level};
pub use error::{Error, Result};
pub use expansion::{expand, EigenReport, Expansion, LevelEigen, MAX_ORDER};
pub use operator::{
    ad, commutator, series_eval, sorted_hermitian_eigen, CMatrix, Operator, OperatorSeries,
};
pub use averaging::{average, check_homological, s_map, HomologicalResiduals};
pub use oracle::{
    exact_eigen, fit_slope, fit_slope_above_floor, log_grid, match_states, rs_block_order2,
    ExactEigen, Pairing, SlopeFit, SlopeOutcome, NOISE_FLOOR,
};
pub use verify::{run_suite, BoundKind, Check, Stream, SuiteConfig, SuiteReport};

/// Compiles and runs every code snippet in the guide under `book/`, so the
/// prose cannot drift from the API. Each chapter becomes one doctest module.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/averaging.md")]
    mod averaging {}
    #[doc = include_str!("../../../book/src/normal-form.md")]
    mod normal_form {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/two-mode.md")]
    mod two_mode {}
    #[doc = include_str!("../../../book/src/certification.md")]
    mod certification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/model-files.md")]
    mod model_files {}
}
