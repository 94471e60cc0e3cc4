//! Density operators, their spectral classes, and seeded sampling on the
//! unitary orbit (flag manifold) of a reference state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, HermitianMatrix, C64};

pub const TRACE_TOL: f64 = 1e-12;
/// Eigenvalues below this are rejected; those in `[-tol, 0)` are round-off.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Adjacent sorted eigenvalues closer than this belong to the same cluster.
pub const CLUSTER_GAP: f64 = 1e-8;
pub const ISOSPECTRAL_TOL: f64 = 1e-9;

/// Positive semidefinite, trace-one Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(HermitianMatrix);

impl DensityMatrix {
    pub fn new(m: HermitianMatrix) -> Result<Self> {
        let tr = m.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::NotDensity(format!("trace is {tr}, expected 1")));
        }
        let values = linalg::eigenvalues(&m)?;
        let min = values.last().copied().unwrap_or(0.0);
        if min < -POSITIVITY_TOL {
            return Err(Error::NotDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix already known to be a state, e.g. the unitary image of one.
    pub(crate) fn from_hermitian_unchecked(m: HermitianMatrix) -> Self {
        Self(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(HermitianMatrix::from_real_diagonal(diag))
    }

    /// `|psi><psi|` for the normalized amplitude vector.
    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "zero or non-finite state vector".into(),
            ));
        }
        let psi: Vec<C64> = amplitudes.iter().map(|a| a / norm).collect();
        let m = ComplexMatrix::from_fn(psi.len(), |r, c| psi[r] * psi[c].conj());
        Ok(Self(HermitianMatrix::symmetrize(m)))
    }

    pub fn completely_mixed(dim: usize) -> Self {
        Self(HermitianMatrix::identity(dim).scale(1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.0
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        self.0.matrix()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        // A DensityMatrix is validated (or a unitary image of a validated
        // one), so Jacobi convergence is not in doubt.
        linalg::eigenvalues(&self.0).expect("Jacobi eigensolver failed on a density matrix")
    }

    /// Eigenvalues with round-off negatives clamped to zero.
    pub fn populations(&self) -> Vec<f64> {
        self.eigenvalues().into_iter().map(|w| w.max(0.0)).collect()
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0)
    }

    /// `U rho U^dagger`.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        Self(self.0.conjugate_by(u))
    }

    /// Hilbert-Schmidt distance `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.matrix() - other.matrix()).frobenius_norm()
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        self.matrix().max_off_diagonal() < tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    Pure,
    PseudoPure,
    Generic,
    Intermediate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub value: f64,
    pub multiplicity: usize,
}

/// Spectral class of a state. When several tags apply (for n = 2 every
/// non-mixed state is both pseudo-pure and generic) the first of pure,
/// pseudo-pure, generic, intermediate wins; [`SpectrumClass::is_generic`] and
/// [`SpectrumClass::pseudo_pure_values`] answer each question independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumClass {
    pub kind: SpectrumKind,
    /// Distinct eigenvalues in descending order.
    pub clusters: Vec<EigenCluster>,
}

impl SpectrumClass {
    pub fn dim(&self) -> usize {
        self.clusters.iter().map(|c| c.multiplicity).sum()
    }

    pub fn is_generic(&self) -> bool {
        self.clusters.len() == self.dim()
    }

    /// `(w, u)`: the simple eigenvalue and the `(n-1)`-fold one.
    pub fn pseudo_pure_values(&self) -> Option<(f64, f64)> {
        let n = self.dim();
        match self.clusters.as_slice() {
            [a, b] if a.multiplicity == 1 && b.multiplicity == n - 1 => Some((a.value, b.value)),
            [a, b] if b.multiplicity == 1 && a.multiplicity == n - 1 => Some((b.value, a.value)),
            _ => None,
        }
    }
}

/// Groups descending eigenvalues into clusters separated by more than `gap`.
pub fn cluster_eigenvalues(values: &[f64], gap: f64) -> Vec<EigenCluster> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut last = f64::NAN;
    for &v in values {
        match out.last_mut() {
            Some((sum, mult)) if (last - v).abs() <= gap => {
                *sum += v;
                *mult += 1;
            }
            _ => out.push((v, 1)),
        }
        last = v;
    }
    out.into_iter()
        .map(|(sum, m)| EigenCluster {
            value: sum / m as f64,
            multiplicity: m,
        })
        .collect()
}

pub fn classify(rho: &DensityMatrix) -> SpectrumClass {
    classify_spectrum(&rho.eigenvalues())
}

pub fn classify_spectrum(values: &[f64]) -> SpectrumClass {
    let n = values.len();
    let clusters = cluster_eigenvalues(values, CLUSTER_GAP);
    let class = SpectrumClass {
        kind: SpectrumKind::Intermediate,
        clusters,
    };
    let kind = match class.pseudo_pure_values() {
        Some((w, u)) if (w - 1.0).abs() <= CLUSTER_GAP && u.abs() <= CLUSTER_GAP => {
            SpectrumKind::Pure
        }
        Some(_) => SpectrumKind::PseudoPure,
        None if class.clusters.len() == n => SpectrumKind::Generic,
        None => SpectrumKind::Intermediate,
    };
    SpectrumClass { kind, ..class }
}

pub fn is_isospectral(a: &DensityMatrix, b: &DensityMatrix) -> bool {
    if a.dim() != b.dim() {
        return false;
    }
    a.eigenvalues()
        .iter()
        .zip(b.eigenvalues())
        .all(|(x, y)| (x - y).abs() < ISOSPECTRAL_TOL)
}

/// Dimension of the unitary orbit: `n^2 - sum_j m_j^2` over eigenvalue multiplicities.
pub fn flag_manifold_dim(rho: &DensityMatrix) -> usize {
    let n = rho.dim();
    let class = classify(rho);
    n * n
        - class
            .clusters
            .iter()
            .map(|c| c.multiplicity * c.multiplicity)
            .sum::<usize>()
}

/// Haar-distributed unitary: Gram-Schmidt on the columns of a complex
/// Gaussian matrix (which yields the positive-diagonal QR factor).
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    let mut cols: Vec<Vec<C64>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im)
                })
                .collect()
        })
        .collect();
    for j in 0..dim {
        for i in 0..j {
            let (head, tail) = cols.split_at_mut(j);
            let qi = &head[i];
            let proj: C64 = qi
                .iter()
                .zip(tail[0].iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            for (x, q) in tail[0].iter_mut().zip(qi) {
                *x -= proj * q;
            }
        }
        let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    ComplexMatrix::from_fn(dim, |r, c| cols[c][r])
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `U rho_ref U^dagger` with `U` Haar-random and determined by `seed`.
pub fn random_isospectral(rho_ref: &DensityMatrix, seed: u64) -> DensityMatrix {
    let mut rng = seeded_rng(seed);
    let u = random_unitary(rho_ref.dim(), &mut rng);
    rho_ref.conjugate_by(&u)
}

/// Moves `rho_ref` along its orbit, `exp(-i eps X) rho_ref exp(i eps X)` with
/// a seeded random Hermitian `X`, choosing `eps` so that
/// `||rho - rho_ref||_F^2 / 2` equals `level`.
pub fn perturbed_isospectral(
    rho_ref: &DensityMatrix,
    level: f64,
    seed: u64,
) -> Result<DensityMatrix> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "perturbation level must be positive, got {level}"
        )));
    }
    let n = rho_ref.dim();
    let mut rng = seeded_rng(seed);
    let mut x = ComplexMatrix::zeros(n);
    for r in 0..n {
        x[(r, r)] = C64::new(rng.sample(StandardNormal), 0.0);
        for c in (r + 1)..n {
            let z = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            x[(r, c)] = z;
            x[(c, r)] = z.conj();
        }
    }
    let eig = linalg::herm_eig(&HermitianMatrix::symmetrize(x))?;
    let at = |eps: f64| rho_ref.conjugate_by(&linalg::unitary_from_eigen(&eig, eps));
    let gap = |eps: f64| {
        let d = at(eps).distance(rho_ref);
        0.5 * d * d - level
    };
    let (mut lo, mut hi) = (0.0, 1e-3);
    let mut tries = 0;
    while gap(hi) < 0.0 {
        lo = hi;
        hi *= 1.5;
        tries += 1;
        if tries > 200 || hi > 1e3 {
            return Err(Error::InvalidArgument(format!(
                "level {level} is not reachable along the sampled direction"
            )));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> DensityMatrix {
        DensityMatrix::from_diagonal(d).unwrap()
    }

    #[test]
    fn rejects_bad_trace_and_negative_eigenvalues() {
        assert!(DensityMatrix::from_diagonal(&[0.5, 0.4]).is_err());
        assert!(DensityMatrix::from_diagonal(&[1.2, -0.2]).is_err());
        assert!(DensityMatrix::from_diagonal(&[1.0, -1e-11]).is_err()); // trace off
        assert!(DensityMatrix::from_diagonal(&[1.0 + 1e-11, -1e-11]).is_ok());
    }

    #[test]
    fn classify_examples() {
        let pure =
            DensityMatrix::pure(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
                .unwrap();
        assert_eq!(classify(&pure).kind, SpectrumKind::Pure);
        assert_eq!(
            classify(&diag(&[0.5, 0.3, 0.2])).kind,
            SpectrumKind::Generic
        );
        let pp = classify(&diag(&[0.6, 0.2, 0.2]));
        assert_eq!(pp.kind, SpectrumKind::PseudoPure);
        let (w, u) = pp.pseudo_pure_values().unwrap();
        assert!((w - 0.6).abs() < 1e-15 && (u - 0.2).abs() < 1e-15);
        assert_eq!(
            classify(&diag(&[0.4, 0.4, 0.1, 0.1])).kind,
            SpectrumKind::Intermediate
        );
        assert_eq!(
            classify(&DensityMatrix::completely_mixed(3)).kind,
            SpectrumKind::Intermediate
        );
    }

    #[test]
    fn two_level_mixed_state_is_both_generic_and_pseudo_pure() {
        let c = classify(&diag(&[0.7, 0.3]));
        assert!(c.is_generic());
        assert!(c.pseudo_pure_values().is_some());
    }

    #[test]
    fn isospectral_examples() {
        assert!(!is_isospectral(
            &diag(&[0.5, 0.5, 0.0]),
            &diag(&[1.0, 0.0, 0.0])
        ));
        let rho = diag(&[0.5, 0.3, 0.2]);
        let mut rng = seeded_rng(3);
        let u = random_unitary(3, &mut rng);
        assert!(is_isospectral(&rho, &rho.conjugate_by(&u)));
    }

    #[test]
    fn flag_manifold_dimensions() {
        assert_eq!(flag_manifold_dim(&diag(&[0.5, 0.3, 0.2])), 6);
        assert_eq!(flag_manifold_dim(&diag(&[1.0, 0.0, 0.0])), 4);
        assert_eq!(flag_manifold_dim(&diag(&[0.6, 0.2, 0.2])), 4);
        assert_eq!(flag_manifold_dim(&DensityMatrix::completely_mixed(3)), 0);
        assert_eq!(flag_manifold_dim(&diag(&[0.4, 0.4, 0.1, 0.1])), 8);
    }

    #[test]
    fn perturbation_hits_requested_level() {
        let rho = diag(&[0.5, 0.3, 0.2]);
        for level in [1e-4, 1e-2] {
            let p = perturbed_isospectral(&rho, level, 3).unwrap();
            let d = p.distance(&rho);
            assert!((0.5 * d * d - level).abs() < 1e-12 * level.max(1e-3));
            assert!(is_isospectral(&p, &rho));
        }
        assert!(perturbed_isospectral(&rho, 10.0, 3).is_err());
    }

    #[test]
    fn random_isospectral_is_deterministic() {
        let rho = diag(&[0.5, 0.3, 0.2]);
        let a = random_isospectral(&rho, 42);
        let b = random_isospectral(&rho, 42);
        assert_eq!(a, b);
        assert_ne!(a, random_isospectral(&rho, 43));
        assert!(is_isospectral(&a, &rho));
    }

    #[test]
    fn haar_average_overlap() {
        // For Haar U, E[U A U^dagger] = Tr(A)/n I, hence E[Tr(U rho U^dagger rho)] = 1/n.
        let rho = diag(&[0.6, 0.25, 0.15]);
        let n = 1000;
        let samples: Vec<f64> = (0..n)
            .map(|s| {
                random_isospectral(&rho, s)
                    .hermitian()
                    .trace_product(rho.hermitian())
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        assert!(
            (mean - 1.0 / 3.0).abs() < 4.0 * stderr,
            "mean {mean}, stderr {stderr}"
        );
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = seeded_rng(9);
        for n in 2..7 {
            let u = random_unitary(n, &mut rng);
            let g = &u.adjoint() * &u;
            assert!((&g - &ComplexMatrix::identity(n)).max_abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn classification_is_unitarily_invariant(seed in 0u64..1000, pick in 0usize..4) {
            let spectra: [&[f64]; 4] = [&[1.0, 0.0, 0.0], &[0.6, 0.2, 0.2], &[0.5, 0.3, 0.2], &[0.4, 0.4, 0.2]];
            let rho = diag(spectra[pick]);
            let other = random_isospectral(&rho, seed);
            prop_assert_eq!(classify(&rho).kind, classify(&other).kind);
            let flag = flag_manifold_dim(&other);
            prop_assert!(flag.is_multiple_of(2) && flag <= 6);
            let drift = rho.eigenvalues().iter().zip(other.eigenvalues())
                .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(drift < 1e-10);
        }
    }
}
