//! Invariant-set tests, critical points of the closed loop for stationary
//! targets, and their linear stability.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{self, BlochVector, GellMannBasis};
use crate::dynamics::{self, BlochSystem, ControlSystem, RunClass, SimOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, C64};
use crate::states::{self, DensityMatrix};

pub const MEMBERSHIP_TOL: f64 = 1e-10;
/// Real parts within this fraction of the spectral radius count as zero.
pub const HYPERBOLICITY_TOL: f64 = 1e-7;
/// Target must have `|f(s*)|` below this to linearize at `s*`.
pub const STATIONARITY_TOL: f64 = 1e-10;
const TANGENT_RANK_TOL: f64 = 1e-9;

/// Residuals `r_m = Tr([rho1, rho2] Ad^m_{-iH0}(-iH1))`, `m = 0..=m_max`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantSetReport {
    pub residuals: Vec<f64>,
    /// `|r_m| / max(1, ||Ad^m(-iH1)||_F)`; what the membership test uses.
    pub scaled_residuals: Vec<f64>,
    pub is_member: bool,
    pub commutator_diagonal: bool,
    pub commutator_zero: bool,
}

/// `n^2 - 2`: higher adjoint powers are linear combinations of lower ones.
pub fn default_m_max(n: usize) -> usize {
    n * n - 2
}

pub fn trace_conditions(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    sys: &ControlSystem,
    m_max: usize,
) -> Result<InvariantSetReport> {
    for found in [rho1.dim(), rho2.dim()] {
        if found != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                found,
            });
        }
    }
    if !states::is_isospectral(rho1, rho2) {
        log::warn!("trace conditions evaluated on a non-isospectral pair");
    }
    let comm = linalg::commutator(rho1.matrix(), rho2.matrix())?;
    let gen0 = sys.h0().matrix().times_minus_i();
    let mut ad = sys.h1().matrix().times_minus_i();
    let mut residuals = Vec::with_capacity(m_max + 1);
    let mut scaled = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        if m > 0 {
            ad = linalg::commutator(&gen0, &ad)?;
        }
        let r = comm.trace_product(&ad).re;
        residuals.push(r);
        scaled.push(r.abs() / ad.frobenius_norm().max(1.0));
    }
    Ok(InvariantSetReport {
        is_member: scaled.iter().all(|&r| r < MEMBERSHIP_TOL),
        residuals,
        scaled_residuals: scaled,
        commutator_diagonal: comm.max_off_diagonal() < MEMBERSHIP_TOL,
        commutator_zero: comm.max_abs() < MEMBERSHIP_TOL,
    })
}

/// For ideal systems `(rho1, rho2)` lies in the invariant set exactly when
/// `[rho1, rho2]` is diagonal.
pub fn ideal_membership(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    sys: &ControlSystem,
) -> Result<bool> {
    if !sys.is_ideal() {
        return Err(Error::NonIdealSystem(
            "diagonal-commutator test requires a strongly regular drift and fully connected control"
                .into(),
        ));
    }
    let comm = linalg::commutator(rho1.matrix(), rho2.matrix())?;
    Ok(comm.max_off_diagonal() < MEMBERSHIP_TOL)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoLevelCase {
    /// Coincident states.
    A,
    /// Antipodal Bloch vectors.
    B,
    /// Both on the equator (zero diagonal component).
    C,
    None,
}

const TWO_LEVEL_TOL: f64 = 1e-9;

pub fn two_level_case(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    basis: &GellMannBasis,
) -> Result<TwoLevelCase> {
    if basis.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "two-level taxonomy needs n = 2, got {}",
            basis.dim()
        )));
    }
    let s1 = bloch::to_bloch(rho1, basis)?;
    let s2 = bloch::to_bloch(rho2, basis)?;
    let close = |sign: f64| {
        s1.0.iter()
            .zip(&s2.0)
            .all(|(a, b)| (a - sign * b).abs() < TWO_LEVEL_TOL)
    };
    Ok(if close(1.0) {
        TwoLevelCase::A
    } else if close(-1.0) {
        TwoLevelCase::B
    } else if s1.0[2].abs() < TWO_LEVEL_TOL && s2.0[2].abs() < TWO_LEVEL_TOL {
        TwoLevelCase::C
    } else {
        TwoLevelCase::None
    })
}

/// All permutations of `0..n` in lexicographic order (identity first,
/// full reversal last).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n)
            .rev()
            .find(|&j| p[j] > p[i - 1])
            .expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Sink,
    Source,
    Saddle,
    Centre,
    /// Empty or non-finite spectrum.
    Degenerate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// State `k` has diagonal entry `w[permutation[k]]`, `w` the target diagonal.
    pub permutation: Vec<usize>,
    pub diagonal: Vec<f64>,
    pub lyapunov: f64,
    pub is_target: bool,
    pub is_global_max: bool,
    /// Tangent-space Jacobian eigenvalues, sorted by real part.
    pub jacobian_spectrum: Vec<C64>,
    pub min_abs_real: f64,
    pub classification: Stability,
}

impl CriticalPoint {
    pub fn state(&self) -> DensityMatrix {
        DensityMatrix::from_diagonal(&self.diagonal).expect("permutation of a valid spectrum")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityCounts {
    pub sinks: usize,
    pub sources: usize,
    pub saddles: usize,
    pub centres: usize,
    pub degenerate: usize,
}

impl StabilityCounts {
    pub fn tally(points: &[CriticalPoint]) -> Self {
        let mut c = Self::default();
        for p in points {
            match p.classification {
                Stability::Sink => c.sinks += 1,
                Stability::Source => c.sources += 1,
                Stability::Saddle => c.saddles += 1,
                Stability::Centre => c.centres += 1,
                Stability::Degenerate => c.degenerate += 1,
            }
        }
        c
    }
}

fn stationary_generic_target(sys: &ControlSystem) -> Result<Vec<f64>> {
    let target = sys.target0();
    if !target.is_diagonal(MEMBERSHIP_TOL) {
        return Err(Error::InadmissibleTarget(
            "critical-point analysis needs a stationary (diagonal) target".into(),
        ));
    }
    if !states::classify(target).is_generic() {
        return Err(Error::InadmissibleTarget(
            "critical-point analysis needs a target with non-degenerate spectrum".into(),
        ));
    }
    Ok(target.hermitian().real_diagonal())
}

/// The `n!` diagonal permutation states of a stationary generic target, each
/// with its tangent-space Jacobian spectrum and stability class. The system
/// need not be ideal; for non-ideal systems the list is still the set of
/// stationary points commuting with the target, and the classification is
/// what exposes centres.
pub fn critical_points(sys: &ControlSystem) -> Result<Vec<CriticalPoint>> {
    let w = stationary_generic_target(sys)?;
    let bsys = BlochSystem::new(sys)?;
    let target = sys.target0();
    let mut points = permutations(w.len())
        .into_iter()
        .map(|perm| {
            let diagonal: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let state = DensityMatrix::from_diagonal(&diagonal)?;
            let s_star = bloch::to_bloch(&state, &bsys.basis)?;
            let jac = jacobian(&bsys, &s_star.to_dvector(), bsys.kappa);
            let reduced = tangent_compression(&jac, &state, &bsys.basis)?;
            let spectrum = sorted_spectrum(&reduced);
            let (classification, min_abs_real) = classify_spectrum(&spectrum);
            Ok(CriticalPoint {
                is_target: perm.iter().enumerate().all(|(i, &p)| i == p),
                is_global_max: false,
                lyapunov: dynamics::lyapunov(&state, target),
                permutation: perm,
                diagonal,
                jacobian_spectrum: spectrum,
                min_abs_real,
                classification,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let v_top = points
        .iter()
        .map(|p| p.lyapunov)
        .fold(f64::NEG_INFINITY, f64::max);
    for p in points.iter_mut() {
        p.is_global_max = (p.lyapunov - v_top).abs() < 1e-14;
    }
    Ok(points)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Classification {
    pub points: Vec<CriticalPoint>,
    pub counts: StabilityCounts,
}

pub fn classify_all(sys: &ControlSystem) -> Result<Classification> {
    let points = critical_points(sys)?;
    Ok(Classification {
        counts: StabilityCounts::tally(&points),
        points,
    })
}

/// `D = A0 + f(s*) A1 + kappa (A1 s*)(A1^T s_d)^T`; the middle term vanishes
/// at a critical point.
pub fn jacobian(bsys: &BlochSystem, s_star: &DVector<f64>, kappa: f64) -> DMatrix<f64> {
    let s_d = bsys.target0.to_dvector();
    let f = kappa * s_d.dot(&(&bsys.a1 * s_star));
    let u = &bsys.a1 * s_star;
    let v = bsys.a1.transpose() * &s_d;
    &bsys.a0 + &bsys.a1 * f + (u * v.transpose()) * kappa
}

/// Jacobian of the stationary-target flow at a zero `s_star` of the control.
pub fn linearize(
    s_star: &BlochVector,
    sys: &ControlSystem,
    basis: &GellMannBasis,
) -> Result<DMatrix<f64>> {
    if basis.dim() != sys.dim() || s_star.0.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            found: s_star.0.len(),
        });
    }
    let bsys = BlochSystem::new(sys)?;
    let s = s_star.to_dvector();
    let f = bsys.control(&s, &bsys.target0.to_dvector());
    if f.abs() > STATIONARITY_TOL {
        return Err(Error::InvalidArgument(format!(
            "control does not vanish at the linearization point (f = {f:e})"
        )));
    }
    Ok(jacobian(&bsys, &s, bsys.kappa))
}

/// Vector field of the stationary-target flow, `(A0 + f(s) A1) s`.
pub fn vector_field(bsys: &BlochSystem, s: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let f = kappa * bsys.target0.to_dvector().dot(&(&bsys.a1 * s));
    (&bsys.a0 + &bsys.a1 * f) * s
}

/// Orthonormal basis (columns) of the tangent space to the unitary orbit at
/// `rho`: the span of the coordinates of `-i[X, rho]` over the basis.
pub fn tangent_basis(rho: &DensityMatrix, basis: &GellMannBasis) -> Result<DMatrix<f64>> {
    let m = basis.len();
    let mut t = DMatrix::zeros(m, m);
    for (j, x) in basis.elements().iter().enumerate() {
        let c = linalg::commutator(&x.times_minus_i(), rho.matrix())?;
        for (i, v) in basis.coordinates(&c)?.into_iter().enumerate() {
            t[(i, j)] = v;
        }
    }
    let svd = t.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > TANGENT_RANK_TOL * top.max(f64::MIN_POSITIVE))
        .collect();
    Ok(u.select_columns(&cols))
}

/// `Q^T D Q` with `Q` the tangent basis at `rho`.
pub fn tangent_compression(
    jac: &DMatrix<f64>,
    rho: &DensityMatrix,
    basis: &GellMannBasis,
) -> Result<DMatrix<f64>> {
    let q = tangent_basis(rho, basis)?;
    Ok(q.transpose() * jac * q)
}

fn sorted_spectrum(m: &DMatrix<f64>) -> Vec<C64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<C64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

/// Sign pattern of the real parts; returns the class and `min |Re|`.
pub fn classify_spectrum(spectrum: &[C64]) -> (Stability, f64) {
    let min_abs_real = spectrum
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    if spectrum.is_empty()
        || spectrum
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return (Stability::Degenerate, min_abs_real);
    }
    let radius = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = HYPERBOLICITY_TOL * radius;
    let class = if spectrum.iter().any(|z| z.re.abs() <= tol) {
        Stability::Centre
    } else if spectrum.iter().all(|z| z.re < 0.0) {
        Stability::Sink
    } else if spectrum.iter().all(|z| z.re > 0.0) {
        Stability::Source
    } else {
        Stability::Saddle
    };
    (class, min_abs_real)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttractionTrial {
    pub seed: u64,
    pub initial_v: f64,
    pub final_v: f64,
    pub outcome: RunClass,
    /// Index (into the `critical_points` list) of the permutation state
    /// closest to the final state.
    pub nearest_critical_point: usize,
    pub final_distance_to_nearest: f64,
}

const MAX_REJECTIONS: usize = 10_000;

/// Haar-random point on the orbit of `target` with `V(rho0, target) > level`
/// (rejection sampling from the stream seeded by `seed`).
pub fn sample_above_level(target: &DensityMatrix, level: f64, seed: u64) -> Result<DensityMatrix> {
    let mut rng = states::seeded_rng(seed);
    for _ in 0..MAX_REJECTIONS {
        let u = states::random_unitary(target.dim(), &mut rng);
        let candidate = target.conjugate_by(&u);
        if dynamics::lyapunov(&candidate, target) > level {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no initial state above V = {level} after {MAX_REJECTIONS} draws"
    )))
}

/// Random isospectral initial states with `V(rho0, rho_d)` above the level
/// of critical point `k` (one-based, `2 <= k <= n! - 1`), each simulated
/// with `opts`. Trial `i` draws from seed `seed + i`.
pub fn unstable_attraction_search(
    sys: &ControlSystem,
    k: usize,
    trials: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<AttractionTrial>> {
    let points = critical_points(sys)?;
    if !sys.is_ideal() {
        return Err(Error::NonIdealSystem(
            "attraction search is defined for ideal systems".into(),
        ));
    }
    if k < 2 || k + 1 > points.len() {
        return Err(Error::InvalidArgument(format!(
            "critical point index {k} outside 2..={}",
            points.len() - 1
        )));
    }
    let level = points[k - 1].lyapunov;
    let target = sys.target0();
    let run = |i: usize| -> Result<AttractionTrial> {
        let trial_seed = seed.wrapping_add(i as u64);
        let rho0 = sample_above_level(target, level, trial_seed)?;
        let traj = dynamics::simulate(sys, &rho0, opts)?;
        let (outcome, _) =
            dynamics::classify_run(&traj, &dynamics::ConvergenceThresholds::default());
        let last = traj.states.last().expect("non-empty trajectory").matrix();
        let (nearest, dist) = points
            .iter()
            .enumerate()
            .map(|(j, p)| {
                (
                    j,
                    (last - &ComplexMatrix::from_real_diagonal(&p.diagonal)).frobenius_norm(),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one critical point");
        Ok(AttractionTrial {
            seed: trial_seed,
            initial_v: dynamics::lyapunov(&rho0, target),
            final_v: traj.final_v(),
            outcome,
            nearest_critical_point: nearest,
            final_distance_to_nearest: dist,
        })
    };
    crate::par_map(0..trials, run).into_iter().collect()
}

/// Machine-readable analysis: critical points plus invariant-set reports.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub critical_points: Vec<CriticalPointRecord>,
    pub counts: Option<StabilityCounts>,
    pub invariant_set_reports: Vec<NamedInvariantReport>,
    pub target_regularity: Option<bloch::TargetRegularity>,
    /// Analyses that were requested but do not apply, with the reason.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointRecord {
    /// One-based, as conventionally written.
    pub permutation: Vec<usize>,
    pub diagonal: Vec<f64>,
    pub lyapunov: f64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub classification: Stability,
    pub is_target: bool,
    pub is_global_max: bool,
}

impl From<&CriticalPoint> for CriticalPointRecord {
    fn from(p: &CriticalPoint) -> Self {
        Self {
            permutation: p.permutation.iter().map(|i| i + 1).collect(),
            diagonal: p.diagonal.clone(),
            lyapunov: p.lyapunov,
            eigenvalues: p.jacobian_spectrum.iter().map(|z| [z.re, z.im]).collect(),
            classification: p.classification,
            is_target: p.is_target,
            is_global_max: p.is_global_max,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedInvariantReport {
    pub name: String,
    #[serde(flatten)]
    pub report: InvariantSetReport,
}

impl AnalysisReport {
    pub fn from_classification(c: &Classification) -> Self {
        Self {
            critical_points: c.points.iter().map(CriticalPointRecord::from).collect(),
            counts: Some(c.counts),
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{ControlHamiltonian, DriftHamiltonian};
    use crate::linalg::HermitianMatrix;
    use crate::states::random_isospectral;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn system(levels: &[f64], h1: ControlHamiltonian, kappa: f64, target: &[f64]) -> ControlSystem {
        ControlSystem::new(
            DriftHamiltonian::new(levels).unwrap(),
            h1,
            kappa,
            DensityMatrix::from_diagonal(target).unwrap(),
        )
        .unwrap()
    }

    fn ideal3(target: &[f64]) -> ControlSystem {
        system(
            &[1.0, 0.3, -1.3],
            ControlHamiltonian::fully_connected_unit(3),
            1.0,
            target,
        )
    }

    fn commutator_pair() -> (DensityMatrix, DensityMatrix) {
        let r = |x: f64| c(x, 0.0);
        let rho1 = ComplexMatrix::from_rows(vec![
            vec![r(1. / 12.), r(-1. / 12.), r(-1. / 12.)],
            vec![r(-1. / 12.), r(11. / 24.), r(1. / 8.)],
            vec![r(-1. / 12.), r(1. / 8.), r(11. / 24.)],
        ])
        .unwrap();
        let rho2 = ComplexMatrix::from_rows(vec![
            vec![r(1. / 3.), c(0., -1. / 12.), c(0., 1. / 12.)],
            vec![c(0., 1. / 12.), r(1. / 3.), c(0., -1. / 4.)],
            vec![c(0., -1. / 12.), c(0., 1. / 4.), r(1. / 3.)],
        ])
        .unwrap();
        let d = |m| DensityMatrix::new(HermitianMatrix::new(m).unwrap()).unwrap();
        (d(rho1), d(rho2))
    }

    #[test]
    fn permutations_are_lexicographic() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[1], vec![0, 2, 1]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn equal_pair_has_zero_residuals() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let rho = random_isospectral(sys.target0(), 5);
        let rep = trace_conditions(&rho, &rho, &sys, default_m_max(3)).unwrap();
        assert_eq!(rep.residuals.len(), 8);
        assert!(rep.is_member && rep.commutator_zero && rep.commutator_diagonal);
    }

    #[test]
    fn diagonal_commutator_pair_is_in_the_invariant_set() {
        let (rho1, rho2) = commutator_pair();
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let rep = trace_conditions(&rho1, &rho2, &sys, default_m_max(3)).unwrap();
        assert!(rep.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(rep.is_member && rep.commutator_diagonal && !rep.commutator_zero);
        assert!(ideal_membership(&rho1, &rho2, &sys).unwrap());
    }

    #[test]
    fn diagonal_commutator_in_exact_arithmetic() {
        type Q = num_complex::Complex<Ratio<i64>>;
        let q = |n: i64, d: i64| Q::new(Ratio::new(n, d), Ratio::from_integer(0));
        let qi = |n: i64, d: i64| Q::new(Ratio::from_integer(0), Ratio::new(n, d));
        let rho1 = [
            [q(1, 12), q(-1, 12), q(-1, 12)],
            [q(-1, 12), q(11, 24), q(1, 8)],
            [q(-1, 12), q(1, 8), q(11, 24)],
        ];
        let rho2 = [
            [q(1, 3), qi(-1, 12), qi(1, 12)],
            [qi(1, 12), q(1, 3), qi(-1, 4)],
            [qi(-1, 12), qi(1, 4), q(1, 3)],
        ];
        let mul = |a: &[[Q; 3]; 3], b: &[[Q; 3]; 3]| {
            let mut out = [[q(0, 1); 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        out[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            out
        };
        let ab = mul(&rho1, &rho2);
        let ba = mul(&rho2, &rho1);
        let expected = [
            [q(0, 1), q(0, 1), q(0, 1)],
            [q(0, 1), qi(11, 144), q(0, 1)],
            [q(0, 1), q(0, 1), qi(-11, 144)],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(ab[i][j] - ba[i][j], expected[i][j]);
            }
        }
    }

    #[test]
    fn generic_pairs_are_not_members() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        for seed in 0..20 {
            let a = random_isospectral(sys.target0(), 100 + seed);
            let b = random_isospectral(sys.target0(), 200 + seed);
            let rep = trace_conditions(&a, &b, &sys, default_m_max(3)).unwrap();
            assert!(rep.residuals.iter().any(|r| r.abs() > 1e-6));
            assert!(!rep.is_member);
            assert!(!ideal_membership(&a, &b, &sys).unwrap());
        }
    }

    #[test]
    fn ideal_membership_needs_ideal_system() {
        let h1 = ControlHamiltonian::from_couplings(3, &[((0, 1), c(1., 0.)), ((1, 2), c(1., 0.))])
            .unwrap();
        let sys = system(&[1.0, 0.3, -1.3], h1, 1.0, &[0.5, 0.3, 0.2]);
        let rho = sys.target0().clone();
        assert!(matches!(
            ideal_membership(&rho, &rho, &sys),
            Err(Error::NonIdealSystem(_))
        ));
    }

    #[test]
    fn off_diagonal_commutator_is_not_a_member() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let a = DensityMatrix::from_diagonal(&[0.5, 0.3, 0.2]).unwrap();
        // rotate in the (1,3) plane only: commutator has a (1,3) entry
        let x = HermitianMatrix::new(ComplexMatrix::from_fn(3, |r, cc| match (r, cc) {
            (0, 2) | (2, 0) => c(1.0, 0.0),
            _ => c(0.0, 0.0),
        }))
        .unwrap();
        let b = a.conjugate_by(&linalg::expm_skew(&x, 0.3).unwrap());
        let comm = linalg::commutator(a.matrix(), b.matrix()).unwrap();
        assert!(comm[(0, 2)].norm() > 1e-3);
        assert!(!ideal_membership(&a, &b, &sys).unwrap());
        let d = DensityMatrix::from_diagonal(&[0.3, 0.5, 0.2]).unwrap();
        assert!(ideal_membership(&a, &d, &sys).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn trace_conditions_agree_with_diagonal_commutator(seed in 0u64..10_000, mix in 0usize..3) {
            let sys = ideal3(&[0.55, 0.3, 0.15]);
            let a = random_isospectral(sys.target0(), seed);
            // mix in members: a with itself, a with a diagonal-commutator partner, random partner
            let b = match mix {
                0 => a.clone(),
                1 => DensityMatrix::from_diagonal(&[0.3, 0.15, 0.55]).unwrap(),
                _ => random_isospectral(sys.target0(), seed + 77_777),
            };
            let a = if mix == 1 { DensityMatrix::from_diagonal(&[0.55, 0.15, 0.3]).unwrap() } else { a };
            let rep = trace_conditions(&a, &b, &sys, default_m_max(3)).unwrap();
            prop_assert_eq!(rep.is_member, ideal_membership(&a, &b, &sys).unwrap());
        }
    }

    #[test]
    fn two_level_taxonomy() {
        let basis = bloch::build_basis(2).unwrap();
        let up = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let down = DensityMatrix::from_diagonal(&[0.0, 1.0]).unwrap();
        assert_eq!(two_level_case(&up, &up, &basis).unwrap(), TwoLevelCase::A);
        assert_eq!(two_level_case(&up, &down, &basis).unwrap(), TwoLevelCase::B);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrix::pure(&[c(h, 0.), c(h, 0.)]).unwrap();
        let plus_i = DensityMatrix::pure(&[c(h, 0.), c(0., h)]).unwrap();
        assert_eq!(
            two_level_case(&plus, &plus_i, &basis).unwrap(),
            TwoLevelCase::C
        );
        let tilted = DensityMatrix::pure(&[c(0.8, 0.), c(0.6, 0.)]).unwrap();
        assert_eq!(
            two_level_case(&tilted, &plus, &basis).unwrap(),
            TwoLevelCase::None
        );
        assert!(two_level_case(&up, &up, &bloch::build_basis(3).unwrap()).is_err());
    }

    #[test]
    fn critical_points_of_generic_stationary_target() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let pts = critical_points(&sys).unwrap();
        assert_eq!(pts.len(), 6);
        assert!(pts[0].is_target && pts[0].lyapunov == 0.0);
        let max: Vec<_> = pts.iter().filter(|p| p.is_global_max).collect();
        assert_eq!(max.len(), 1);
        assert_eq!(max[0].diagonal, vec![0.2, 0.3, 0.5]);
        assert!((max[0].lyapunov - dynamics::v_max(sys.target0())).abs() < 1e-15);
    }

    #[test]
    fn critical_point_values_match_exact_fractions() {
        // w = (1/2, 3/10, 1/5); V = (1/2) sum (w_tau(k) - w_k)^2
        let w = [Ratio::new(1i64, 2), Ratio::new(3, 10), Ratio::new(1, 5)];
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        for p in critical_points(&sys).unwrap() {
            let exact: Ratio<i64> = (0..3)
                .map(|k| {
                    let d = w[p.permutation[k]] - w[k];
                    d * d
                })
                .sum::<Ratio<i64>>()
                / 2;
            let as_f64 = *exact.numer() as f64 / *exact.denom() as f64;
            assert!((p.lyapunov - as_f64).abs() < 1e-15, "{:?}", p.permutation);
        }
    }

    #[test]
    fn critical_points_reject_inadmissible_targets() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let moving = sys
            .with_target(random_isospectral(sys.target0(), 1))
            .unwrap();
        assert!(matches!(
            critical_points(&moving),
            Err(Error::InadmissibleTarget(_))
        ));
        let degenerate = sys
            .with_target(DensityMatrix::from_diagonal(&[0.4, 0.4, 0.2]).unwrap())
            .unwrap();
        assert!(matches!(
            critical_points(&degenerate),
            Err(Error::InadmissibleTarget(_))
        ));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = states::seeded_rng(9);
        use rand::Rng;
        for trial in 0..20 {
            let mut levels: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            levels.sort_by(|a, b| b.total_cmp(a));
            let couplings: Vec<((usize, usize), C64)> = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&kl| {
                    (
                        kl,
                        c(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)),
                    )
                })
                .collect();
            let h1 = ControlHamiltonian::from_couplings(3, &couplings).unwrap();
            let sys = system(&levels, h1, rng.random_range(0.5..2.0), &[0.6, 0.25, 0.15]);
            let bsys = BlochSystem::new(&sys).unwrap();
            let perm = &permutations(3)[trial % 6];
            let w = [0.6, 0.25, 0.15];
            let state =
                DensityMatrix::from_diagonal(&perm.iter().map(|&i| w[i]).collect::<Vec<_>>())
                    .unwrap();
            let s_star = bloch::to_bloch(&state, &bsys.basis).unwrap();
            let analytic = linearize(&s_star, &sys, &bsys.basis).unwrap();
            let s = s_star.to_dvector();
            let h = 1e-5;
            let mut fd = DMatrix::zeros(8, 8);
            for j in 0..8 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[j] += h;
                sm[j] -= h;
                let col = (vector_field(&bsys, &sp, sys.kappa())
                    - vector_field(&bsys, &sm, sys.kappa()))
                    / (2.0 * h);
                fd.set_column(j, &col);
            }
            assert!((analytic - fd).amax() < 1e-6);
        }
    }

    #[test]
    fn linearize_rejects_non_stationary_point() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let basis = bloch::build_basis(3).unwrap();
        let s = bloch::to_bloch(&random_isospectral(sys.target0(), 3), &basis).unwrap();
        assert!(linearize(&s, &sys, &basis).is_err());
    }

    #[test]
    fn zero_gain_jacobian_is_the_drift_generator() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let bsys = BlochSystem::new(&sys).unwrap();
        let j = jacobian(&bsys, &bsys.target0.to_dvector(), 0.0);
        assert_eq!(j, bsys.a0);
        let q = tangent_compression(&j, sys.target0(), &bsys.basis).unwrap();
        assert_eq!(q.nrows(), 6);
        let spectrum = sorted_spectrum(&q);
        assert!(spectrum.iter().all(|z| z.re.abs() < 1e-12));
        assert_eq!(classify_spectrum(&spectrum).0, Stability::Centre);
    }

    #[test]
    fn tangent_space_dimension_is_flag_manifold_dimension() {
        let basis = bloch::build_basis(3).unwrap();
        for d in [&[0.5, 0.3, 0.2][..], &[0.6, 0.2, 0.2], &[1.0, 0.0, 0.0]] {
            let rho = random_isospectral(&DensityMatrix::from_diagonal(d).unwrap(), 4);
            let q = tangent_basis(&rho, &basis).unwrap();
            assert_eq!(q.ncols(), states::flag_manifold_dim(&rho));
        }
    }

    #[test]
    fn ideal_three_level_classification() {
        let c = classify_all(&ideal3(&[0.5, 0.3, 0.2])).unwrap();
        assert_eq!(
            c.counts,
            StabilityCounts {
                sinks: 1,
                sources: 1,
                saddles: 4,
                centres: 0,
                degenerate: 0
            }
        );
        assert_eq!(c.points[0].classification, Stability::Sink);
        let src = c
            .points
            .iter()
            .find(|p| p.classification == Stability::Source)
            .unwrap();
        assert!(src.is_global_max);
    }

    #[test]
    fn non_ideal_families_show_centres() {
        let missing =
            ControlHamiltonian::from_couplings(3, &[((0, 1), c(1., 0.)), ((1, 2), c(1., 0.))])
                .unwrap();
        let a = system(&[1.0, 0.3, -1.3], missing, 1.0, &[0.5, 0.3, 0.2]);
        let b = system(
            &[1.0, 0.0, -1.0],
            ControlHamiltonian::fully_connected_unit(3),
            1.0,
            &[0.5, 0.3, 0.2],
        );
        for sys in [a, b] {
            let pts = critical_points(&sys).unwrap();
            assert_eq!(pts[0].classification, Stability::Centre);
            assert!(pts[0].min_abs_real < 1e-7);
        }
    }

    #[test]
    fn critical_point_is_invariant_under_simulation() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let saddle = critical_points(&sys).unwrap()[2].state();
        let traj = dynamics::simulate(
            &sys,
            &saddle,
            &SimOptions::new(20.0, sys.default_dt()).with_stride(100),
        )
        .unwrap();
        assert!(traj.step_diagnostics.max_abs_control < 1e-12);
        assert!((traj.states.last().unwrap().matrix() - saddle.matrix()).max_abs() < 1e-12);
    }

    #[test]
    fn attraction_search_checks_index() {
        let sys = ideal3(&[0.5, 0.3, 0.2]);
        let opts = SimOptions::new(1.0, 0.01);
        assert!(unstable_attraction_search(&sys, 1, 1, 0, &opts).is_err());
        assert!(unstable_attraction_search(&sys, 6, 1, 0, &opts).is_err());
    }
}
