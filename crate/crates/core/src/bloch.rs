//! Real (generalized Bloch/Stokes) representation of density operators.
//!
//! The basis is the orthonormal generalized Gell-Mann set with `Tr(a b)` as
//! inner product. Its ordering is fixed crate-wide: off-diagonal pairs
//! `(k, l)` in lexicographic order, each symmetric element immediately
//! followed by its antisymmetric partner, then the diagonal elements by
//! increasing `k`. The first `n^2 - n` coordinates therefore span the
//! non-Cartan subspace and the last `n - 1` the Cartan subspace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, HermitianMatrix, C64};
use crate::states::DensityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisElement {
    /// `(e_kl + e_lk) / sqrt(2)`
    Symmetric(usize, usize),
    /// `i (-e_kl + e_lk) / sqrt(2)`
    Antisymmetric(usize, usize),
    /// `(e_11 + ... + e_kk - k e_{k+1,k+1}) / sqrt(k (k + 1))`, `k` one-based.
    Diagonal(usize),
}

#[derive(Clone, Debug)]
pub struct GellMannBasis {
    dim: usize,
    labels: Vec<BasisElement>,
    elements: Vec<HermitianMatrix>,
}

impl GellMannBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "Gell-Mann basis needs dimension >= 2, got {dim}"
            )));
        }
        let mut labels = Vec::with_capacity(dim * dim - 1);
        for k in 0..dim {
            for l in (k + 1)..dim {
                labels.push(BasisElement::Symmetric(k, l));
                labels.push(BasisElement::Antisymmetric(k, l));
            }
        }
        labels.extend((1..dim).map(BasisElement::Diagonal));
        let elements = labels.iter().map(|&e| element_matrix(dim, e)).collect();
        Ok(Self {
            dim,
            labels,
            elements,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of coordinates, `n^2 - 1`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of non-Cartan (off-diagonal) coordinates, `n^2 - n`.
    pub fn off_diagonal_len(&self) -> usize {
        self.dim * (self.dim - 1)
    }

    pub fn labels(&self) -> &[BasisElement] {
        &self.labels
    }

    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    /// `Tr(M lambda_i)` for every basis element, for any square `M`. Only the
    /// real part is kept; it is the full answer when `M` is Hermitian.
    pub fn coordinates(&self, m: &ComplexMatrix) -> Result<Vec<f64>> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: m.dim(),
            });
        }
        let s2 = std::f64::consts::SQRT_2;
        Ok(self
            .labels
            .iter()
            .map(|&e| match e {
                // Tr(M (e_kl + e_lk)) / sqrt2
                BasisElement::Symmetric(k, l) => (m[(l, k)] + m[(k, l)]).re / s2,
                // Tr(M i(-e_kl + e_lk)) / sqrt2 = i (M_kl - M_lk) / sqrt2
                BasisElement::Antisymmetric(k, l) => {
                    (C64::new(0.0, 1.0) * (m[(k, l)] - m[(l, k)])).re / s2
                }
                BasisElement::Diagonal(k) => {
                    let head: f64 = (0..k).map(|j| m[(j, j)].re).sum();
                    (head - k as f64 * m[(k, k)].re) / ((k * (k + 1)) as f64).sqrt()
                }
            })
            .collect())
    }

    /// `sum_i s_i lambda_i` (traceless part only).
    pub fn combine(&self, coords: &[f64]) -> Result<HermitianMatrix> {
        if coords.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: coords.len(),
            });
        }
        let n = self.dim;
        let s2 = std::f64::consts::SQRT_2;
        let mut m = ComplexMatrix::zeros(n);
        for (&e, &s) in self.labels.iter().zip(coords) {
            match e {
                BasisElement::Symmetric(k, l) => {
                    m[(k, l)] += C64::new(s / s2, 0.0);
                    m[(l, k)] += C64::new(s / s2, 0.0);
                }
                BasisElement::Antisymmetric(k, l) => {
                    m[(k, l)] += C64::new(0.0, -s / s2);
                    m[(l, k)] += C64::new(0.0, s / s2);
                }
                BasisElement::Diagonal(k) => {
                    let norm = ((k * (k + 1)) as f64).sqrt();
                    for j in 0..k {
                        m[(j, j)] += C64::new(s / norm, 0.0);
                    }
                    m[(k, k)] -= C64::new(k as f64 * s / norm, 0.0);
                }
            }
        }
        Ok(HermitianMatrix::symmetrize(m))
    }
}

fn element_matrix(n: usize, e: BasisElement) -> HermitianMatrix {
    let s2 = std::f64::consts::SQRT_2;
    let mut m = ComplexMatrix::zeros(n);
    match e {
        BasisElement::Symmetric(k, l) => {
            m[(k, l)] = C64::new(1.0 / s2, 0.0);
            m[(l, k)] = C64::new(1.0 / s2, 0.0);
        }
        BasisElement::Antisymmetric(k, l) => {
            m[(k, l)] = C64::new(0.0, -1.0 / s2);
            m[(l, k)] = C64::new(0.0, 1.0 / s2);
        }
        BasisElement::Diagonal(k) => {
            let norm = ((k * (k + 1)) as f64).sqrt();
            for j in 0..k {
                m[(j, j)] = C64::new(1.0 / norm, 0.0);
            }
            m[(k, k)] = C64::new(-(k as f64) / norm, 0.0);
        }
    }
    HermitianMatrix::symmetrize(m)
}

pub fn build_basis(n: usize) -> Result<GellMannBasis> {
    GellMannBasis::new(n)
}

/// Real coordinates `s_i = Tr(rho lambda_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochVector(pub Vec<f64>);

impl BlochVector {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub fn to_bloch(rho: &DensityMatrix, basis: &GellMannBasis) -> Result<BlochVector> {
    basis.coordinates(rho.matrix()).map(BlochVector)
}

/// `I/n + sum_i s_i lambda_i`; positivity is not checked.
pub fn from_bloch(s: &BlochVector, basis: &GellMannBasis) -> Result<HermitianMatrix> {
    let n = basis.dim();
    let traceless = basis.combine(&s.0)?;
    Ok(traceless.add_scaled(1.0 / n as f64, &HermitianMatrix::identity(n)))
}

/// Matrix of `X -> [-iH, X]` on the traceless Hermitian subspace:
/// `A_ij = Tr(lambda_i [-iH, lambda_j])`. Antisymmetric for Hermitian `H`.
pub fn adjoint_matrix(h: &HermitianMatrix, basis: &GellMannBasis) -> Result<DMatrix<f64>> {
    let tr = h.trace();
    if tr.abs() > 1e-12 * h.max_abs().max(1.0) {
        return Err(Error::NotTraceless { trace: tr });
    }
    adjoint_matrix_unchecked(h, basis)
}

/// Same as [`adjoint_matrix`] without the trace check; the identity part of
/// `h` commutes with everything and drops out.
pub(crate) fn adjoint_matrix_unchecked(
    h: &HermitianMatrix,
    basis: &GellMannBasis,
) -> Result<DMatrix<f64>> {
    if h.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: h.dim(),
        });
    }
    let gen = h.times_minus_i();
    let m = basis.len();
    let mut a = DMatrix::zeros(m, m);
    for (j, lam) in basis.elements().iter().enumerate() {
        let c = linalg::commutator(&gen, lam.matrix())?;
        for (i, v) in basis.coordinates(&c)?.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    Ok(a)
}

/// Outcome of the non-stationary target regularity test.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetRegularity {
    pub has_equal_diagonals: bool,
    /// Determinant of the non-Cartan block of the commutator map.
    pub det_tilde: f64,
    /// Threshold below which `det_tilde` counts as zero.
    pub det_threshold: f64,
}

impl TargetRegularity {
    pub fn det_is_zero(&self) -> bool {
        self.det_tilde.abs() < self.det_threshold
    }

    /// No equal diagonal entries and a non-vanishing determinant.
    pub fn is_regular(&self) -> bool {
        !self.has_equal_diagonals && !self.det_is_zero()
    }
}

/// Diagonal entries closer than this count as equal.
pub const DIAGONAL_EQUALITY_TOL: f64 = 1e-9;
const DET_RELATIVE_TOL: f64 = 1e-10;

/// Builds the real matrix of `X -> -i[rho_d0, X]`, keeps the square block on
/// the first `n^2 - n` rows and columns, and returns its determinant together
/// with the equal-diagonal flag. The `-i` makes the map real; it only
/// rescales the determinant by a unit factor.
pub fn target_regularity(
    rho_d0: &DensityMatrix,
    basis: &GellMannBasis,
) -> Result<TargetRegularity> {
    let n = basis.dim();
    if rho_d0.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rho_d0.dim(),
        });
    }
    let diag = rho_d0.hermitian().real_diagonal();
    let has_equal_diagonals =
        (0..n).any(|i| ((i + 1)..n).any(|j| (diag[i] - diag[j]).abs() < DIAGONAL_EQUALITY_TOL));
    let a = adjoint_matrix_unchecked(rho_d0.hermitian(), basis)?;
    let m = basis.off_diagonal_len();
    let tilde = a.view((0, 0), (m, m)).into_owned();
    let det_tilde = linalg::real_determinant(&tilde);
    let scale = tilde.amax();
    let det_threshold = DET_RELATIVE_TOL * scale.powi(m as i32);
    Ok(TargetRegularity {
        has_equal_diagonals,
        det_tilde,
        det_threshold,
    })
}
