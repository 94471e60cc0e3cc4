//! Dense complex matrix kernels for small systems (n up to about 10).
//!
//! Everything here is a pure function on immutable values. The Hermitian
//! eigensolver is a cyclic complex Jacobi iteration; the unitary propagator
//! `exp(-iHt)` is built from that eigendecomposition so it stays unitary to
//! machine precision.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerance on `|M - M^dagger|` accepted by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-14;

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(d, 0.0);
        }
        m
    }

    /// Row-major construction; every row must have `rows.len()` entries and
    /// every entry must be finite.
    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { dim, data })
    }

    /// Row-major flat data of length `dim * dim`.
    pub fn from_flat(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|k| self[(k, k)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self[(k, k)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest modulus among off-diagonal entries.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                if r != c {
                    m = m.max(self[(r, c)].norm());
                }
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `max |M - M^dagger|` entrywise.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for r in 0..self.dim {
            for c in r..self.dim {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    /// `Tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut acc = ZERO;
        for r in 0..n {
            for c in 0..n {
                acc += self.data[r * n + c] * other.data[c * n + r];
            }
        }
        acc
    }

    /// `U * self * U^dagger`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        let n = self.dim;
        let t = u * self;
        let mut out = vec![ZERO; n * n];
        for r in 0..n {
            let tr = &t.data[r * n..(r + 1) * n];
            for c in 0..n {
                let uc = &u.data[c * n..(c + 1) * n];
                out[r * n + c] = tr.iter().zip(uc).map(|(a, b)| a * b.conj()).sum();
            }
        }
        Self { dim: n, data: out }
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Self {
            dim: self.dim,
            data,
        }
    }

    /// `Tr(self [a, b])` without forming the commutator.
    pub fn trace_with_commutator(&self, a: &Self, b: &Self) -> C64 {
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                let h = self.data[i * n + j];
                if h == ZERO {
                    continue;
                }
                let mut s = ZERO;
                for k in 0..n {
                    s += a.data[j * n + k] * b.data[k * n + i]
                        - b.data[j * n + k] * a.data[k * n + i];
                }
                acc += h * s;
            }
        }
        acc
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  ")?;
            for c in 0..self.dim {
                let z = self[(r, c)];
                write!(f, "{:>10.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix product dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out[r * n..(r + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        ComplexMatrix { dim: n, data: out }
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix sum dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix difference dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Hermitian matrix. Construction symmetrizes exactly, so `M == M^dagger`
/// holds bit-for-bit afterwards.
#[derive(Clone, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    /// Accepts `m` if it is Hermitian within [`HERMITIAN_TOL`] (scaled by the
    /// largest entry when that exceeds one) and returns its exact Hermitian part.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        let deviation = m.hermitian_deviation();
        if deviation > HERMITIAN_TOL * m.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self::symmetrize(m))
    }

    /// Hermitian part `(M + M^dagger) / 2` with no tolerance check.
    pub fn symmetrize(mut m: ComplexMatrix) -> Self {
        let n = m.dim;
        for r in 0..n {
            m[(r, r)] = C64::new(m[(r, r)].re, 0.0);
            for c in (r + 1)..n {
                let avg = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
                m[(r, c)] = avg;
                m[(c, r)] = avg.conj();
            }
        }
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(ComplexMatrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        Self(ComplexMatrix::from_real_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn real_diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.0[(k, k)].re).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale_real(s))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Self(ComplexMatrix {
            dim: self.0.dim,
            data: self
                .0
                .data
                .iter()
                .zip(&other.0.data)
                .map(|(a, b)| a + b * s)
                .collect(),
        })
    }

    /// `U * self * U^dagger`, re-symmetrized to remove round-off asymmetry.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        Self::symmetrize(self.0.conjugate_by(u))
    }

    /// `Tr(self * other)`, which is real for two Hermitian matrices.
    pub fn trace_product(&self, other: &Self) -> f64 {
        self.0.trace_product(&other.0).re
    }

    /// Multiply by `-i`, giving the skew-Hermitian generator `-iH`.
    pub fn times_minus_i(&self) -> ComplexMatrix {
        self.0.scale(-I)
    }
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hermitian{:?}", self.0)
    }
}

impl std::ops::Deref for HermitianMatrix {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// `AB - BA`.
pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.check_same_dim(b)?;
    Ok(&(a * b) - &(b * a))
}

/// The m-fold adjoint action `[-iH, [-iH, ... [-iH, X]]]`; `m = 0` returns `X`.
pub fn adjoint_power(h: &HermitianMatrix, x: &ComplexMatrix, m: usize) -> Result<ComplexMatrix> {
    h.0.check_same_dim(x)?;
    let gen = h.times_minus_i();
    let mut acc = x.clone();
    for _ in 0..m {
        acc = commutator(&gen, &acc)?;
    }
    Ok(acc)
}

/// Eigendecomposition `M = U diag(values) U^dagger` with eigenvalues sorted
/// in descending order; column `k` of `vectors` belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = ComplexMatrix::from_real_diagonal(&self.values);
        d.conjugate_by(&self.vectors)
    }
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.dim;
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += a[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
///
/// Each rotation first removes the phase of the pivot `a_pq`, then applies the
/// real symmetric Jacobi rotation to the resulting 2x2 block. Iterates at most
/// 100 sweeps until the off-diagonal Frobenius norm falls below `1e-14`
/// relative to the norm of the input.
pub fn herm_eig(m: &HermitianMatrix) -> Result<HermitianEigen> {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm();
    let target = JACOBI_OFF_TOL * scale;

    let mut converged = scale == 0.0 || off_diagonal_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let phase = apq / r;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G = diag(1, conj(phase)) * [[c, s], [-s, c]] on the (p, q) plane.
                let g00 = C64::new(c, 0.0);
                let g01 = C64::new(s, 0.0);
                let g10 = -phase.conj() * s;
                let g11 = phase.conj() * c;

                // A <- A G
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * g00 + akq * g10;
                    a[(k, q)] = akp * g01 + akq * g11;
                }
                // A <- G^dagger A
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = g00.conj() * apk + g10.conj() * aqk;
                    a[(q, k)] = g01.conj() * apk + g11.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                // V <- V G
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * g00 + vkq * g10;
                    v[(k, q)] = vkp * g01 + vkq * g11;
                }
            }
        }
        converged = off_diagonal_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            off_norm: off_diagonal_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues only, descending.
pub fn eigenvalues(m: &HermitianMatrix) -> Result<Vec<f64>> {
    herm_eig(m).map(|e| e.values)
}

/// `exp(-iHt)` through the eigendecomposition of `H`.
pub fn expm_skew(h: &HermitianMatrix, t: f64) -> Result<ComplexMatrix> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite time {t}")));
    }
    if h.dim() == 2 {
        return Ok(expm_skew_2x2(h, t));
    }
    let eig = herm_eig(h)?;
    Ok(unitary_from_eigen(&eig, t))
}

/// `H = c I + x sx + y sy + z sz` gives
/// `exp(-iHt) = exp(-ict) (cos(rt) I - i sin(rt) (H - cI) / r)`.
fn expm_skew_2x2(h: &HermitianMatrix, t: f64) -> ComplexMatrix {
    let (a, d, b) = (h[(0, 0)].re, h[(1, 1)].re, h[(0, 1)]);
    let c = 0.5 * (a + d);
    let z = 0.5 * (a - d);
    let r = (z * z + b.norm_sqr()).sqrt();
    let cos = (r * t).cos();
    // sin(rt)/r, continuous at r = 0
    let sinc = if r * t.abs() > 1e-8 {
        (r * t).sin() / r
    } else {
        t
    };
    let g = C64::from_polar(1.0, -c * t);
    let mut u = ComplexMatrix::zeros(2);
    u[(0, 0)] = g * C64::new(cos, -sinc * z);
    u[(1, 1)] = g * C64::new(cos, sinc * z);
    u[(0, 1)] = g * (-I * sinc * b);
    u[(1, 0)] = g * (-I * sinc * b.conj());
    u
}

/// `U diag(exp(-i w t)) U^dagger` for a precomputed eigendecomposition.
pub fn unitary_from_eigen(eig: &HermitianEigen, t: f64) -> ComplexMatrix {
    let n = eig.vectors.dim();
    let phases: Vec<C64> = eig
        .values
        .iter()
        .map(|&w| C64::from_polar(1.0, -w * t))
        .collect();
    let u = &eig.vectors;
    ComplexMatrix::from_fn(n, |r, c| {
        (0..n)
            .map(|k| u[(r, k)] * phases[k] * u[(c, k)].conj())
            .sum()
    })
}

/// Determinant of a square real matrix by LU with partial pivoting.
pub fn real_determinant(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_2x2_matches_eigendecomposition() {
        let h = HermitianMatrix::new(
            ComplexMatrix::from_rows(vec![
                vec![C64::new(0.7, 0.0), C64::new(0.3, -0.4)],
                vec![C64::new(0.3, 0.4), C64::new(-0.2, 0.0)],
            ])
            .unwrap(),
        )
        .unwrap();
        for t in [0.0, 1e-9, 0.37, 5.0] {
            let via_eig = unitary_from_eigen(&herm_eig(&h).unwrap(), t);
            assert!((&expm_skew(&h, t).unwrap() - &via_eig).max_abs() < 1e-14);
        }
        let scalar = HermitianMatrix::identity(2).scale(0.4);
        let u = expm_skew(&scalar, 2.0).unwrap();
        assert!((u[(0, 0)] - C64::from_polar(1.0, -0.8)).norm() < 1e-15);
        assert_eq!(u[(0, 1)], C64::new(0.0, 0.0));
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_rows(vec![vec![c(0., 0.), c(1., 0.)], vec![c(1., 0.), c(0., 0.)]])
            .unwrap()
    }

    fn random_hermitian(n: usize, entries: &[f64]) -> HermitianMatrix {
        let mut k = 0;
        let mut next = || {
            let v = entries[k % entries.len()];
            k += 1;
            v
        };
        let m = ComplexMatrix::from_fn(n, |_, _| c(next(), next()));
        HermitianMatrix::symmetrize(m)
    }

    #[test]
    fn commutator_with_identity_vanishes() {
        let b = random_hermitian(3, &[0.3, -1.2, 0.7, 2.0, 0.1]);
        let z = commutator(&ComplexMatrix::identity(3), &b).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let z = commutator(&b, &b).unwrap();
        assert!(z.max_abs() < 1e-15);
    }

    #[test]
    fn commutator_dimension_mismatch() {
        let err = commutator(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hermitian_construction_rejects_asymmetric() {
        let mut m = ComplexMatrix::identity(2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian { .. })
        ));
        let h = HermitianMatrix::new(sigma_x()).unwrap();
        assert_eq!(h.hermitian_deviation(), 0.0);
    }

    #[test]
    fn adjoint_power_zero_is_identity_map() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let x = sigma_x();
        assert_eq!(adjoint_power(&h, &x, 0).unwrap(), x);
    }

    #[test]
    fn adjoint_power_of_commuting_diagonals() {
        let h = HermitianMatrix::from_real_diagonal(&[2.0, -0.5, -1.5]);
        let x = ComplexMatrix::from_real_diagonal(&[0.1, 0.7, -3.0]);
        assert_eq!(adjoint_power(&h, &x, 1).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn adjoint_power_two_matches_repeated_commutator() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let x = sigma_x();
        // explicit oracle: apply [-iH, .] twice by hand
        let gen = ComplexMatrix::from_real_diagonal(&[1.0, -1.0]).scale(c(0.0, -1.0));
        let once = &(&gen * &x) - &(&x * &gen);
        let twice = &(&gen * &once) - &(&once * &gen);
        let got = adjoint_power(&h, &x, 2).unwrap();
        assert!((&got - &twice).max_abs() < 1e-15);
        // for sigma_z and sigma_x the double commutator is -4 sigma_x
        assert!((&got - &x.scale_real(-4.0)).max_abs() < 1e-15);
    }

    #[test]
    fn eig_of_diagonal_is_sorted() {
        let e = herm_eig(&HermitianMatrix::from_real_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn eig_of_sigma_x() {
        let e = herm_eig(&HermitianMatrix::new(sigma_x()).unwrap()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!((e.values[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_of_zero_matrix() {
        let e = herm_eig(&HermitianMatrix::zeros(4)).unwrap();
        assert_eq!(e.values, vec![0.0; 4]);
        assert_eq!(e.vectors, ComplexMatrix::identity(4));
    }

    #[test]
    fn expm_at_zero_time_is_identity() {
        let h = random_hermitian(3, &[0.4, 1.1, -0.3, 0.9]);
        let u = expm_skew(&h, 0.0).unwrap();
        assert!((&u - &ComplexMatrix::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn expm_of_diagonal() {
        let a = [0.7, -0.2, -0.5];
        let t = 1.3;
        let u = expm_skew(&HermitianMatrix::from_real_diagonal(&a), t).unwrap();
        for (k, &ak) in a.iter().enumerate() {
            assert!((u[(k, k)] - C64::from_polar(1.0, -ak * t)).norm() < 1e-15);
        }
        assert!(u.max_off_diagonal() < 1e-15);
    }

    #[test]
    fn expm_rejects_non_finite_time() {
        let h = HermitianMatrix::identity(2);
        assert!(expm_skew(&h, f64::NAN).is_err());
    }

    #[test]
    fn determinant_of_small_matrix() {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!((real_determinant(&m) - 5.0).abs() < 1e-14);
    }

    fn hermitian_strategy(n: usize) -> impl Strategy<Value = HermitianMatrix> {
        prop::collection::vec(-2.0f64..2.0, 2 * n * n).prop_map(move |v| {
            let m = ComplexMatrix::from_fn(n, |r, c| {
                C64::new(v[2 * (r * n + c)], v[2 * (r * n + c) + 1])
            });
            HermitianMatrix::symmetrize(m)
        })
    }

    fn complex_strategy(n: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec(-2.0f64..2.0, 2 * n * n).prop_map(move |v| {
            ComplexMatrix::from_fn(n, |r, c| {
                C64::new(v[2 * (r * n + c)], v[2 * (r * n + c) + 1])
            })
        })
    }

    proptest! {
        #[test]
        fn commutator_is_antisymmetric(a in complex_strategy(3), b in complex_strategy(3)) {
            let ab = commutator(&a, &b).unwrap();
            let ba = commutator(&b, &a).unwrap();
            prop_assert!((&ab + &ba).max_abs() < 1e-12);
        }

        #[test]
        fn commutator_cyclic_trace_identity(
            a in complex_strategy(3), b in complex_strategy(3), c in complex_strategy(3)
        ) {
            let lhs = (&commutator(&a, &b).unwrap() * &c).trace();
            let rhs = -(&commutator(&c, &b).unwrap() * &a).trace();
            prop_assert!((lhs - rhs).norm() < 1e-11);
        }

        #[test]
        fn adjoint_power_recursion(h in hermitian_strategy(3), x in complex_strategy(3), m in 0usize..5) {
            let next = adjoint_power(&h, &x, m + 1).unwrap();
            let manual = commutator(&h.times_minus_i(), &adjoint_power(&h, &x, m).unwrap()).unwrap();
            prop_assert!((&next - &manual).max_abs() <= 1e-12 * manual.max_abs().max(1.0));
        }

        #[test]
        fn eig_reconstructs_and_is_unitary(n in 2usize..7, seed in prop::collection::vec(-3.0f64..3.0, 98)) {
            let m = HermitianMatrix::symmetrize(ComplexMatrix::from_fn(n, |r, c| {
                C64::new(seed[2 * (r * n + c)], seed[2 * (r * n + c) + 1])
            }));
            let e = herm_eig(&m).unwrap();
            let u = &e.vectors;
            let resid = &(m.matrix() * u) - &(u * &ComplexMatrix::from_real_diagonal(&e.values));
            prop_assert!(resid.max_abs() < 1e-10);
            let gram = &u.adjoint() * u;
            prop_assert!((&gram - &ComplexMatrix::identity(n)).max_abs() < 1e-10);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn expm_is_unitary_and_a_group(h in hermitian_strategy(4), s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let u1 = expm_skew(&h, 1.0).unwrap();
            prop_assert!((&(&u1.adjoint() * &u1) - &ComplexMatrix::identity(4)).max_abs() < 1e-12);
            let us = expm_skew(&h, s).unwrap();
            let ut = expm_skew(&h, t).unwrap();
            let ust = expm_skew(&h, s + t).unwrap();
            prop_assert!((&(&us * &ut) - &ust).max_abs() < 1e-10);
        }
    }
}
