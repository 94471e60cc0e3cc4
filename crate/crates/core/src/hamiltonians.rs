//! Drift and control Hamiltonians in the eigenbasis of the drift term.
//!
//! Level indices are zero-based throughout: the pair `(k, l)` with `k < l`
//! refers to levels `k` and `l` of the descending level list.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, HermitianMatrix, C64};

/// Two transition frequencies are equal when they differ by less than this,
/// scaled by `max(1, |omega|)`.
pub const FREQUENCY_TOL: f64 = 1e-9;
/// A coupling with modulus below this counts as absent.
pub const COUPLING_TOL: f64 = 1e-12;

/// `H0 = diag(a_1, ..., a_n)` with `a_1 >= ... >= a_n` and zero trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftHamiltonian {
    levels: Vec<f64>,
    matrix: HermitianMatrix,
}

/// Off-diagonal control Hamiltonian `H1` (zero diagonal, traceless).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlHamiltonian {
    matrix: HermitianMatrix,
}

impl DriftHamiltonian {
    /// Levels must already be in descending order; they are shifted to zero mean.
    pub fn new(levels: &[f64]) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidArgument(
                "drift Hamiltonian needs at least two levels".into(),
            ));
        }
        if levels.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("non-finite energy level".into()));
        }
        if levels.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "energy levels must be in descending order".into(),
            ));
        }
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        let levels: Vec<f64> = levels.iter().map(|a| a - mean).collect();
        let matrix = HermitianMatrix::from_real_diagonal(&levels);
        Ok(Self { levels, matrix })
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.matrix
    }
}

impl ControlHamiltonian {
    /// Rejects matrices with a non-zero diagonal.
    pub fn new(matrix: HermitianMatrix) -> Result<Self> {
        let diag = matrix.real_diagonal();
        if let Some(d) = diag.iter().find(|d| d.abs() > COUPLING_TOL) {
            return Err(Error::InvalidArgument(format!(
                "control Hamiltonian must have zero diagonal (found {d})"
            )));
        }
        Ok(Self {
            matrix: HermitianMatrix::symmetrize(ComplexMatrix::from_fn(matrix.dim(), |r, c| {
                if r == c {
                    C64::new(0.0, 0.0)
                } else {
                    matrix[(r, c)]
                }
            })),
        })
    }

    /// Builds `H1` from upper-triangle couplings `b_kl` (k < l).
    pub fn from_couplings(dim: usize, couplings: &[((usize, usize), C64)]) -> Result<Self> {
        let mut m = ComplexMatrix::zeros(dim);
        for &((k, l), b) in couplings {
            if k >= l || l >= dim {
                return Err(Error::InvalidArgument(format!(
                    "coupling index ({k}, {l}) must satisfy k < l < {dim}"
                )));
            }
            m[(k, l)] = b;
            m[(l, k)] = b.conj();
        }
        Self::new(HermitianMatrix::new(m)?)
    }

    /// `b_kl` for all `k < l` with every pair equal to one.
    pub fn fully_connected_unit(dim: usize) -> Self {
        let m = ComplexMatrix::from_fn(dim, |r, c| {
            if r == c {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0, 0.0)
            }
        });
        Self {
            matrix: HermitianMatrix::symmetrize(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn coupling(&self, k: usize, l: usize) -> C64 {
        self.matrix[(k, l)]
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            matrix: self.matrix.scale(s),
        }
    }
}

/// Sorts `levels` into descending order and applies the same permutation to
/// the rows and columns of `h1`. Returns the permutation `perm` such that new
/// index `i` was old index `perm[i]`.
pub fn sorted_pair(
    levels: &[f64],
    h1: &HermitianMatrix,
) -> Result<(DriftHamiltonian, ControlHamiltonian, Vec<usize>)> {
    if levels.len() != h1.dim() {
        return Err(Error::DimensionMismatch {
            expected: levels.len(),
            found: h1.dim(),
        });
    }
    let mut perm: Vec<usize> = (0..levels.len()).collect();
    // stable: equal levels keep their input order
    perm.sort_by(|&i, &j| levels[j].total_cmp(&levels[i]));
    let sorted: Vec<f64> = perm.iter().map(|&i| levels[i]).collect();
    let h1p = permute_hermitian(h1, &perm);
    Ok((
        DriftHamiltonian::new(&sorted)?,
        ControlHamiltonian::new(h1p)?,
        perm,
    ))
}

/// `P M P^T` with new index `i` taken from old index `perm[i]`.
pub fn permute_hermitian(m: &HermitianMatrix, perm: &[usize]) -> HermitianMatrix {
    HermitianMatrix::symmetrize(ComplexMatrix::from_fn(m.dim(), |r, c| {
        m[(perm[r], perm[c])]
    }))
}

/// `omega_kl = a_l - a_k` for every `k < l`.
pub fn transition_frequencies(h0: &DriftHamiltonian) -> BTreeMap<(usize, usize), f64> {
    let a = h0.levels();
    let mut out = BTreeMap::new();
    for k in 0..a.len() {
        for l in (k + 1)..a.len() {
            out.insert((k, l), a[l] - a[k]);
        }
    }
    out
}

fn frequencies_equal(x: f64, y: f64) -> bool {
    (x - y).abs() < FREQUENCY_TOL * x.abs().max(1.0)
}

/// All transition frequencies are pairwise distinct and none vanishes.
///
/// A vanishing `omega_kl` means degenerate levels `k` and `l`, which coincide
/// with the trivial diagonal frequency `omega_kk = 0`.
pub fn is_strongly_regular(h0: &DriftHamiltonian) -> bool {
    let freqs: Vec<f64> = transition_frequencies(h0).into_values().collect();
    if freqs.iter().any(|&w| frequencies_equal(w, 0.0)) {
        return false;
    }
    for i in 0..freqs.len() {
        for j in (i + 1)..freqs.len() {
            if frequencies_equal(freqs[i], freqs[j]) {
                return false;
            }
        }
    }
    true
}

/// Every off-diagonal coupling `b_kl` is non-zero.
pub fn is_fully_connected(h1: &ControlHamiltonian) -> bool {
    let n = h1.dim();
    (0..n).all(|k| ((k + 1)..n).all(|l| h1.coupling(k, l).norm() >= COUPLING_TOL))
}

/// `H - (Tr H / n) I`.
pub fn normalize_traceless(h: &HermitianMatrix) -> HermitianMatrix {
    let n = h.dim();
    let shift = h.trace() / n as f64;
    h.add_scaled(-shift, &HermitianMatrix::identity(n))
}
