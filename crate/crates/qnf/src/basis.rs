//! Degeneracy structure of an unperturbed diagonal.
//!
//! A [`Basis`] partitions the indices of a diagonal Hamiltonian into levels
//! of exactly degenerate (or tolerance-merged) eigenvalues. All averaging
//! operations are defined relative to this partition.

use crate::error::{Error, Result};
use crate::operator::Operator;

/// One unperturbed level: a representative energy and its multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    /// Mean of the merged diagonal entries.
    pub energy: f64,
    /// Number of basis states in the level.
    pub degeneracy: usize,
}

/// Partition of basis indices into degenerate levels, sorted by energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    levels: Vec<Level>,
    /// Original matrix indices of each level, ascending.
    members: Vec<Vec<usize>>,
    /// Level index of each original matrix index.
    level_of: Vec<usize>,
    tolerance: f64,
}

/// Builds a [`Basis`] from the diagonal of H0.
///
/// Entries are grouped by transitive closure of the relation
/// `|e_a - e_b| <= tolerance` on adjacent sorted values. A chain whose
/// adjacent gaps all sit within the tolerance but whose total spread
/// exceeds it is rejected as ambiguous.
pub fn make_basis(diagonal: &[f64], tolerance: f64) -> Result<Basis> {
    Basis::new(diagonal, tolerance)
}

impl Basis {
    /// See [`make_basis`].
    pub fn new(diagonal: &[f64], tolerance: f64) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::EmptyDiagonal);
        }
        if !tolerance.is_finite() || tolerance < 0.0 {
            return Err(Error::InvalidTolerance { value: tolerance });
        }
        for (index, &value) in diagonal.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "diagonal",
                    index,
                    value,
                });
            }
        }

        let mut order: Vec<usize> = (0..diagonal.len()).collect();
        order.sort_by(|&a, &b| diagonal[a].total_cmp(&diagonal[b]).then(a.cmp(&b)));

        let mut levels = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut level_of = vec![0usize; diagonal.len()];

        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len()
                && diagonal[order[end]] - diagonal[order[end - 1]] <= tolerance
            {
                end += 1;
            }
            let lo = diagonal[order[start]];
            let hi = diagonal[order[end - 1]];
            if hi - lo > tolerance {
                return Err(Error::AmbiguousDegeneracy {
                    first: start,
                    last: end - 1,
                    spread: hi - lo,
                    tolerance,
                });
            }
            let group: Vec<usize> = {
                let mut g: Vec<usize> = order[start..end].to_vec();
                g.sort_unstable();
                g
            };
            let energy = group.iter().map(|&i| diagonal[i]).sum::<f64>() / group.len() as f64;
            for &i in &group {
                level_of[i] = levels.len();
            }
            levels.push(Level {
                energy,
                degeneracy: group.len(),
            });
            members.push(group);
            start = end;
        }

        Ok(Basis {
            levels,
            members,
            level_of,
            tolerance,
        })
    }

    /// Total number of basis states.
    pub fn dim(&self) -> usize {
        self.level_of.len()
    }

    /// Levels in ascending energy order.
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Number of distinct levels.
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Representative energy of a level.
    pub fn energy(&self, level: usize) -> f64 {
        self.levels[level].energy
    }

    /// Degeneracy of a level.
    pub fn degeneracy(&self, level: usize) -> usize {
        self.levels[level].degeneracy
    }

    /// Original matrix indices belonging to a level, ascending.
    pub fn level_indices(&self, level: usize) -> &[usize] {
        &self.members[level]
    }

    /// Level that a matrix index belongs to.
    pub fn level_of(&self, index: usize) -> usize {
        self.level_of[index]
    }

    /// Merge tolerance the basis was built with.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// True when every level is simple.
    pub fn is_nondegenerate(&self) -> bool {
        self.levels.iter().all(|l| l.degeneracy == 1)
    }

    /// Level energies written back to original index positions.
    pub fn to_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.dim()];
        for (li, group) in self.members.iter().enumerate() {
            for &i in group {
                diag[i] = self.levels[li].energy;
            }
        }
        diag
    }

    /// H0 reconstructed from the level energies, exactly degenerate.
    pub fn h0(&self) -> Operator {
        Operator::from_real_diagonal(&self.to_diagonal())
    }
}
