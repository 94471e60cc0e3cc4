//! Closed-loop propagation of the controlled state and the freely evolving
//! target.
//!
//! The pair `(rho, rho_d)` evolves autonomously:
//!
//! ```text
//! d rho   / dt = -i [H0 + f H1, rho]
//! d rho_d / dt = -i [H0, rho_d]
//! f            = kappa Tr([-i H1, rho] rho_d)
//! ```
//!
//! and `V = Tr((rho - rho_d)^2) / 2` obeys `dV/dt = -f^2 / kappa`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{self, BlochVector, GellMannBasis};
use crate::error::{Error, Result};
use crate::hamiltonians::{
    self, is_fully_connected, is_strongly_regular, ControlHamiltonian, DriftHamiltonian,
};
use crate::linalg::{self, ComplexMatrix, HermitianMatrix, C64};
use crate::states::{self, DensityMatrix};

/// Imaginary residue of `Tr([-iH1, rho] rho_d)` tolerated before the inputs
/// are declared non-Hermitian.
pub const CONTROL_IMAG_TOL: f64 = 1e-12;

/// Bundle `(H0, H1, kappa, rho_d(0))`.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    h0: DriftHamiltonian,
    h1: ControlHamiltonian,
    kappa: f64,
    target0: DensityMatrix,
}

impl ControlSystem {
    pub fn new(
        h0: DriftHamiltonian,
        h1: ControlHamiltonian,
        kappa: f64,
        target0: DensityMatrix,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feedback gain must be positive, got {kappa}"
            )));
        }
        let n = h0.dim();
        for found in [h1.dim(), target0.dim()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        Ok(Self {
            h0,
            h1,
            kappa,
            target0,
        })
    }

    /// Accepts levels in any order. Levels are sorted descending and the same
    /// permutation is applied to `h1` and to the target, so the physical
    /// pairing of levels, couplings and populations is kept.
    pub fn from_levels(
        levels: &[f64],
        h1: &HermitianMatrix,
        kappa: f64,
        target0: &DensityMatrix,
    ) -> Result<(Self, Vec<usize>)> {
        let (h0, h1, perm) = hamiltonians::sorted_pair(levels, h1)?;
        if target0.dim() != perm.len() {
            return Err(Error::DimensionMismatch {
                expected: perm.len(),
                found: target0.dim(),
            });
        }
        let target = DensityMatrix::from_hermitian_unchecked(hamiltonians::permute_hermitian(
            target0.hermitian(),
            &perm,
        ));
        Ok((Self::new(h0, h1, kappa, target)?, perm))
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn h0(&self) -> &DriftHamiltonian {
        &self.h0
    }

    pub fn h1(&self) -> &ControlHamiltonian {
        &self.h1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn target0(&self) -> &DensityMatrix {
        &self.target0
    }

    pub fn with_target(&self, target0: DensityMatrix) -> Result<Self> {
        Self::new(self.h0.clone(), self.h1.clone(), self.kappa, target0)
    }

    /// `H1 -> c H1`, `kappa -> kappa / c^2`; leaves `f H1` unchanged.
    pub fn rescaled_control(&self, c: f64) -> Result<Self> {
        Self::new(
            self.h0.clone(),
            self.h1.scale(c),
            self.kappa / (c * c),
            self.target0.clone(),
        )
    }

    /// Strongly regular drift and fully connected control.
    pub fn is_ideal(&self) -> bool {
        is_strongly_regular(&self.h0) && is_fully_connected(&self.h1)
    }

    /// Largest `|omega_kl|`.
    pub fn max_frequency(&self) -> f64 {
        hamiltonians::transition_frequencies(&self.h0)
            .values()
            .fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Smallest non-zero `|omega_kl|`, if any.
    pub fn min_frequency(&self) -> Option<f64> {
        hamiltonians::transition_frequencies(&self.h0)
            .values()
            .map(|w| w.abs())
            .filter(|&w| w > hamiltonians::FREQUENCY_TOL)
            .min_by(f64::total_cmp)
    }

    /// `1e-3`, shortened to `1e-3 * 2 pi / max |omega_kl|` when some free
    /// oscillation has a period below one time unit.
    pub fn default_dt(&self) -> f64 {
        1e-3 * (2.0 * PI / self.max_frequency()).min(1.0)
    }

    /// Free-evolution propagator `exp(-i H0 t)` (diagonal).
    pub fn free_propagator(&self, t: f64) -> ComplexMatrix {
        let phases: Vec<C64> = self
            .h0
            .levels()
            .iter()
            .map(|&a| C64::from_polar(1.0, -a * t))
            .collect();
        let mut u = ComplexMatrix::zeros(self.dim());
        for (k, p) in phases.into_iter().enumerate() {
            u[(k, k)] = p;
        }
        u
    }

    /// Target at time `t`.
    pub fn target_at(&self, t: f64) -> DensityMatrix {
        self.target0.conjugate_by(&self.free_propagator(t))
    }

    fn total_hamiltonian(&self, f: f64) -> HermitianMatrix {
        self.h0.matrix().add_scaled(f, self.h1.matrix())
    }
}

/// `kappa Tr([-iH1, rho] rho_d)`.
pub fn control_field(
    rho: &DensityMatrix,
    rho_d: &DensityMatrix,
    sys: &ControlSystem,
) -> Result<f64> {
    for found in [rho.dim(), rho_d.dim()] {
        if found != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                found,
            });
        }
    }
    let z = raw_control_trace(sys.h1.matrix(), rho.matrix(), rho_d.matrix());
    if z.im.abs() > CONTROL_IMAG_TOL * z.re.abs().max(1.0) {
        return Err(Error::ComplexControl(z.im));
    }
    Ok(sys.kappa * z.re)
}

// Tr([-iH1, rho] rho_d) = -i Tr(H1 [rho, rho_d]).
fn raw_control_trace(h1: &HermitianMatrix, rho: &ComplexMatrix, rho_d: &ComplexMatrix) -> C64 {
    -C64::i() * h1.trace_with_commutator(rho, rho_d)
}

fn control_unchecked(sys: &ControlSystem, rho: &ComplexMatrix, rho_d: &ComplexMatrix) -> f64 {
    sys.kappa * raw_control_trace(sys.h1.matrix(), rho, rho_d).re
}

/// `Tr((rho - rho_d)^2) / 2`.
pub fn lyapunov(rho: &DensityMatrix, rho_d: &DensityMatrix) -> f64 {
    half_sq_distance(rho.matrix(), rho_d.matrix())
}

fn half_sq_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    0.5 * sq_distance(a, b)
}

fn sq_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum()
}

/// Maximum of the Lyapunov function over the orbit of `rho_d`: the value at
/// the permutation state pairing the largest eigenvalue with the smallest
/// (rearrangement inequality), i.e. `sum w_k^2 - sum w_k w_{n+1-k}`.
pub fn v_max(rho_d: &DensityMatrix) -> f64 {
    v_max_from_spectrum(&rho_d.eigenvalues())
}

pub fn v_max_from_spectrum(w_desc: &[f64]) -> f64 {
    let n = w_desc.len();
    let sq: f64 = w_desc.iter().map(|w| w * w).sum();
    let cross: f64 = (0..n).map(|k| w_desc[k] * w_desc[n - 1 - k]).sum();
    sq - cross
}

/// `sum_k w_k^2`, an upper bound on `v_max`; reported alongside it.
pub fn sum_sq_eigenvalues(rho_d: &DensityMatrix) -> f64 {
    rho_d.purity()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Half-step predictor for `f`, then exact unitary conjugation with the
    /// midpoint Hamiltonian. Second order; preserves both spectra exactly.
    #[default]
    MidpointUnitary,
    /// Classical explicit fourth-order Runge-Kutta on the matrix equations.
    Rk4,
}

/// Fixed-step propagator for one system and step size.
pub struct Propagator<'a> {
    sys: &'a ControlSystem,
    dt: f64,
    integrator: Integrator,
    // Free evolution acts entrywise: (k, l) picks up exp(-i (a_k - a_l) t).
    free_full: ComplexMatrix,
    free_half: ComplexMatrix,
}

fn free_phases(sys: &ControlSystem, t: f64) -> ComplexMatrix {
    let a = sys.h0.levels();
    let n = a.len();
    let mut m = ComplexMatrix::zeros(n);
    for k in 0..n {
        m[(k, k)] = C64::new(1.0, 0.0);
        for l in (k + 1)..n {
            let p = C64::from_polar(1.0, -(a[k] - a[l]) * t);
            m[(k, l)] = p;
            m[(l, k)] = p.conj();
        }
    }
    m
}

impl<'a> Propagator<'a> {
    pub fn new(sys: &'a ControlSystem, dt: f64, integrator: Integrator) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {dt}"
            )));
        }
        Ok(Self {
            sys,
            dt,
            integrator,
            free_full: free_phases(sys, dt),
            free_half: free_phases(sys, 0.5 * dt),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `(rho, rho_d)` by one step; `f_now` is the control at the
    /// current point (pass `None` to have it computed).
    pub fn step(
        &self,
        rho: &DensityMatrix,
        rho_d: &DensityMatrix,
        f_now: Option<f64>,
    ) -> Result<(DensityMatrix, DensityMatrix)> {
        let f0 = f_now.unwrap_or_else(|| control_unchecked(self.sys, rho.matrix(), rho_d.matrix()));
        match self.integrator {
            Integrator::MidpointUnitary => {
                let rho_half = self.evolve(rho.matrix(), f0, 0.5 * self.dt, &self.free_half)?;
                let rho_d_half = rho_d.matrix().hadamard(&self.free_half);
                let f_mid = control_unchecked(self.sys, &rho_half, &rho_d_half);
                let next = self.evolve(rho.matrix(), f_mid, self.dt, &self.free_full)?;
                let next_d = rho_d.matrix().hadamard(&self.free_full);
                Ok((
                    DensityMatrix::from_hermitian_unchecked(HermitianMatrix::symmetrize(next)),
                    DensityMatrix::from_hermitian_unchecked(HermitianMatrix::symmetrize(next_d)),
                ))
            }
            Integrator::Rk4 => Ok(self.rk4(rho, rho_d)),
        }
    }

    // With f exactly zero this is the same entrywise free evolution as the
    // target gets, so a state sitting on the target stays there bit for bit.
    fn evolve(
        &self,
        rho: &ComplexMatrix,
        f: f64,
        t: f64,
        phases: &ComplexMatrix,
    ) -> Result<ComplexMatrix> {
        if f == 0.0 {
            return Ok(rho.hadamard(phases));
        }
        let u = linalg::expm_skew(&self.sys.total_hamiltonian(f), t)?;
        Ok(rho.conjugate_by(&u))
    }

    fn derivative(
        &self,
        rho: &ComplexMatrix,
        rho_d: &ComplexMatrix,
    ) -> (ComplexMatrix, ComplexMatrix) {
        let f = control_unchecked(self.sys, rho, rho_d);
        let gen = self.sys.total_hamiltonian(f).times_minus_i();
        let gen0 = self.sys.h0.matrix().times_minus_i();
        (
            &(&gen * rho) - &(rho * &gen),
            &(&gen0 * rho_d) - &(rho_d * &gen0),
        )
    }

    fn rk4(&self, rho: &DensityMatrix, rho_d: &DensityMatrix) -> (DensityMatrix, DensityMatrix) {
        let h = self.dt;
        let (r0, d0) = (rho.matrix(), rho_d.matrix());
        let axpy = |x: &ComplexMatrix, s: f64, y: &ComplexMatrix| x + &y.scale_real(s);
        let (k1r, k1d) = self.derivative(r0, d0);
        let (k2r, k2d) = self.derivative(&axpy(r0, 0.5 * h, &k1r), &axpy(d0, 0.5 * h, &k1d));
        let (k3r, k3d) = self.derivative(&axpy(r0, 0.5 * h, &k2r), &axpy(d0, 0.5 * h, &k2d));
        let (k4r, k4d) = self.derivative(&axpy(r0, h, &k3r), &axpy(d0, h, &k3d));
        let combine = |x0: &ComplexMatrix,
                       k1: &ComplexMatrix,
                       k2: &ComplexMatrix,
                       k3: &ComplexMatrix,
                       k4: &ComplexMatrix| {
            let sum = &(&(k1 + &k2.scale_real(2.0)) + &k3.scale_real(2.0)) + k4;
            HermitianMatrix::symmetrize(x0 + &sum.scale_real(h / 6.0))
        };
        (
            DensityMatrix::from_hermitian_unchecked(combine(r0, &k1r, &k2r, &k3r, &k4r)),
            DensityMatrix::from_hermitian_unchecked(combine(d0, &k1d, &k2d, &k3d, &k4d)),
        )
    }
}

/// One step of the default integrator.
pub fn step(
    rho: &DensityMatrix,
    rho_d: &DensityMatrix,
    sys: &ControlSystem,
    dt: f64,
) -> Result<(DensityMatrix, DensityMatrix)> {
    Propagator::new(sys, dt, Integrator::MidpointUnitary)?.step(rho, rho_d, None)
}

/// Samples of the free orbit `exp(-iH0 tau) rho_d(0) exp(iH0 tau)` used for
/// the distance-to-orbit diagnostic. Distances are found on a coarse grid of
/// `samples` points over `[0, 50 * 2 pi / min |omega|]` and then refined by a
/// golden-section search around the best grid points.
#[derive(Clone, Debug)]
pub struct OrbitSampler {
    target0: ComplexMatrix,
    /// `a_k - a_l` for entry `(k, l)`.
    gaps: Vec<f64>,
    tau_max: f64,
    grid: Vec<ComplexMatrix>,
}

pub const ORBIT_SAMPLES: usize = 2000;
const ORBIT_PERIODS: f64 = 50.0;
const ORBIT_REFINE_CANDIDATES: usize = 4;

impl OrbitSampler {
    pub fn new(sys: &ControlSystem, samples: usize) -> Self {
        let n = sys.dim();
        let a = sys.h0.levels();
        let gaps: Vec<f64> = (0..n * n).map(|i| a[i / n] - a[i % n]).collect();
        let target0 = sys.target0.matrix().clone();
        let stationary = sys.target0.is_diagonal(1e-14);
        let (tau_max, count) = match sys.min_frequency() {
            Some(w) if !stationary => (ORBIT_PERIODS * 2.0 * PI / w, samples.max(2)),
            _ => (0.0, 1),
        };
        let mut s = Self {
            target0,
            gaps,
            tau_max,
            grid: Vec::new(),
        };
        s.grid = (0..count)
            .map(|j| s.point(tau_max * j as f64 / (count - 1).max(1) as f64))
            .collect();
        s
    }

    fn point(&self, tau: f64) -> ComplexMatrix {
        let n = self.target0.dim();
        ComplexMatrix::from_fn(n, |r, c| {
            self.target0[(r, c)] * C64::from_polar(1.0, -self.gaps[r * n + c] * tau)
        })
    }

    fn distance_at(&self, rho: &ComplexMatrix, tau: f64) -> f64 {
        // Both matrices are Hermitian, so the upper triangle suffices.
        let n = rho.dim();
        let (x, y) = (rho.as_slice(), self.target0.as_slice());
        let mut diag = 0.0;
        let mut off = 0.0;
        for k in 0..n {
            diag += (x[k * n + k] - y[k * n + k]).norm_sqr();
            for l in (k + 1)..n {
                let i = k * n + l;
                off += (x[i] - y[i] * C64::from_polar(1.0, -self.gaps[i] * tau)).norm_sqr();
            }
        }
        (diag + 2.0 * off).sqrt()
    }

    /// Hilbert-Schmidt distance from `rho` to the sampled orbit.
    pub fn distance(&self, rho: &ComplexMatrix) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .grid
            .iter()
            .enumerate()
            .map(|(j, p)| (sq_distance(rho, p), j))
            .collect();
        if self.grid.len() < 3 {
            return d.iter().map(|x| x.0).fold(f64::INFINITY, f64::min).sqrt();
        }
        let k = ORBIT_REFINE_CANDIDATES.min(d.len());
        d.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0));
        let h = self.tau_max / (self.grid.len() - 1) as f64;
        let mut best = d[..k]
            .iter()
            .map(|x| x.0)
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        for &(_, j) in &d[..k] {
            let center = j as f64 * h;
            best = best.min(self.golden_section(rho, center - h, center + h));
        }
        best
    }

    fn golden_section(&self, rho: &ComplexMatrix, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let mut f1 = self.distance_at(rho, x1);
        let mut f2 = self.distance_at(rho, x2);
        for _ in 0..60 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = self.distance_at(rho, x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = self.distance_at(rho, x2);
            }
        }
        f1.min(f2)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    /// Record every `record_stride`-th step (the first and last states are
    /// always recorded).
    pub record_stride: usize,
    pub integrator: Integrator,
    pub orbit_distance: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            record_stride: 1,
            integrator: Integrator::MidpointUnitary,
            orbit_distance: true,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn without_orbit(mut self) -> Self {
        self.orbit_distance = false;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Summary statistics accumulated at every integrator step, not only at
/// recorded samples.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub steps: usize,
    /// Max over interior steps of `|central dV/dt + f^2/kappa| / max(1, f^2/kappa)`.
    pub vdot_residual: f64,
    /// Max over steps of `V(t_{i+1}) - V(t_i)`; negative when V strictly decreases.
    pub max_v_increase: f64,
    pub max_abs_control: f64,
    pub min_dist_target: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub targets: Vec<DensityMatrix>,
    pub control: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub dist_target: Vec<f64>,
    /// Empty when the orbit diagnostic is disabled.
    pub dist_orbit: Vec<f64>,
    pub purity: Vec<f64>,
    pub dt: f64,
    pub kappa: f64,
    pub v_max: f64,
    pub sum_sq_eigenvalues: f64,
    pub step_diagnostics: StepDiagnostics,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_v(&self) -> f64 {
        *self
            .lyapunov
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn min_dist_orbit(&self) -> Option<f64> {
        self.dist_orbit.iter().copied().reduce(f64::min)
    }

    /// Largest change of any eigenvalue of `rho(t)` / `rho_d(t)` relative to
    /// the first recorded sample: `(state_drift, target_drift)`.
    pub fn spectrum_drift(&self) -> (f64, f64) {
        let drift = |seq: &[DensityMatrix]| {
            let first = seq[0].eigenvalues();
            seq.iter()
                .map(|r| {
                    r.eigenvalues()
                        .iter()
                        .zip(&first)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        (drift(&self.states), drift(&self.targets))
    }

    /// Mean over the last `fraction` of recorded samples.
    pub fn tail_mean(series: &[f64], fraction: f64) -> f64 {
        let k = ((series.len() as f64 * fraction).ceil() as usize).clamp(1, series.len());
        series[series.len() - k..].iter().sum::<f64>() / k as f64
    }
}

struct VdotTracker {
    kappa: f64,
    dt: f64,
    prev_v: Option<f64>,
    cur: Option<(f64, f64)>,
    residual: f64,
    max_increase: f64,
}

impl VdotTracker {
    fn new(kappa: f64, dt: f64) -> Self {
        Self {
            kappa,
            dt,
            prev_v: None,
            cur: None,
            residual: 0.0,
            max_increase: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, v: f64, f: f64) {
        if let Some((v_cur, f_cur)) = self.cur {
            self.max_increase = self.max_increase.max(v - v_cur);
            if let Some(v_prev) = self.prev_v {
                let rate = f_cur * f_cur / self.kappa;
                let r = ((v - v_prev) / (2.0 * self.dt) + rate).abs() / rate.max(1.0);
                self.residual = self.residual.max(r);
            }
            self.prev_v = Some(v_cur);
        }
        self.cur = Some((v, f));
    }
}

/// Integrates from `rho0` over `[0, horizon]`.
///
/// A `rho0` that is not isospectral to the target only triggers a warning.
pub fn simulate(
    sys: &ControlSystem,
    rho0: &DensityMatrix,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(opts.horizon >= 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid horizon {}",
            opts.horizon
        )));
    }
    if rho0.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            found: rho0.dim(),
        });
    }
    if !states::is_isospectral(rho0, &sys.target0) {
        log::warn!("initial state is not isospectral to the target; V cannot reach zero");
    }
    let prop = Propagator::new(sys, opts.dt, opts.integrator)?;
    let orbit = opts
        .orbit_distance
        .then(|| OrbitSampler::new(sys, ORBIT_SAMPLES));
    let steps = opts.steps();
    let stride = opts.record_stride.max(1);
    let capacity = steps / stride + 2;

    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        targets: Vec::with_capacity(capacity),
        control: Vec::with_capacity(capacity),
        lyapunov: Vec::with_capacity(capacity),
        dist_target: Vec::with_capacity(capacity),
        dist_orbit: Vec::new(),
        purity: Vec::with_capacity(capacity),
        dt: opts.dt,
        kappa: sys.kappa,
        v_max: v_max(&sys.target0),
        sum_sq_eigenvalues: sum_sq_eigenvalues(&sys.target0),
        step_diagnostics: StepDiagnostics::default(),
    };
    let mut tracker = VdotTracker::new(sys.kappa, opts.dt);
    let mut max_abs_control = 0.0f64;
    let mut min_dist_target = f64::INFINITY;

    let mut rho = rho0.clone();
    let mut rho_d = sys.target0.clone();
    for i in 0..=steps {
        let t = i as f64 * opts.dt;
        if !rho.matrix().is_finite() || !rho_d.matrix().is_finite() {
            return Err(Error::NonFinite { t });
        }
        let f = control_unchecked(sys, rho.matrix(), rho_d.matrix());
        let v = half_sq_distance(rho.matrix(), rho_d.matrix());
        let dist = (2.0 * v).sqrt();
        tracker.push(v, f);
        max_abs_control = max_abs_control.max(f.abs());
        min_dist_target = min_dist_target.min(dist);

        if i % stride == 0 || i == steps {
            traj.times.push(t);
            traj.control.push(f);
            traj.lyapunov.push(v);
            traj.dist_target.push(dist);
            traj.purity.push(rho.purity());
            if let Some(o) = &orbit {
                traj.dist_orbit.push(o.distance(rho.matrix()));
            }
            traj.states.push(rho.clone());
            traj.targets.push(rho_d.clone());
        }
        if i < steps {
            let (next, next_d) = prop.step(&rho, &rho_d, Some(f))?;
            rho = next;
            rho_d = next_d;
        }
    }
    traj.step_diagnostics = StepDiagnostics {
        steps,
        vdot_residual: tracker.residual,
        max_v_increase: if tracker.max_increase.is_finite() {
            tracker.max_increase
        } else {
            0.0
        },
        max_abs_control,
        min_dist_target,
    };
    Ok(traj)
}

/// Finite-difference check of `dV/dt = -f^2/kappa` on the recorded samples:
/// the max over interior samples of `|central dV/dt + f^2/kappa|`, each
/// normalized by `max(1, f^2/kappa)`.
pub fn vdot_residual(traj: &Trajectory, sys: &ControlSystem) -> Result<f64> {
    if traj.len() < 3 {
        return Err(Error::InvalidArgument(
            "need at least three samples for a central difference".into(),
        ));
    }
    let mut worst = 0.0f64;
    for i in 1..traj.len() - 1 {
        let h = traj.times[i + 1] - traj.times[i - 1];
        let dv = (traj.lyapunov[i + 1] - traj.lyapunov[i - 1]) / h;
        let rate = traj.control[i] * traj.control[i] / sys.kappa;
        worst = worst.max((dv + rate).abs() / rate.max(1.0));
    }
    Ok(worst)
}

pub const CSV_HEADER: &str = "t,V,f,dist_target,dist_orbit,purity";

/// One row per recorded sample. `dist_orbit` is left empty when the orbit
/// diagnostic is disabled.
pub fn write_csv<W: std::io::Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for i in 0..traj.len() {
        let orbit = traj
            .dist_orbit
            .get(i)
            .map(|d| d.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            traj.times[i],
            traj.lyapunov[i],
            traj.control[i],
            traj.dist_target[i],
            orbit,
            traj.purity[i]
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub rho_re: Vec<f64>,
    pub rho_im: Vec<f64>,
    pub rhod_re: Vec<f64>,
    pub rhod_im: Vec<f64>,
}

/// Full states at every `stride`-th recorded sample (row-major).
pub fn snapshots(traj: &Trajectory, stride: usize) -> Vec<Snapshot> {
    let split = |m: &ComplexMatrix| -> (Vec<f64>, Vec<f64>) {
        m.as_slice().iter().map(|z| (z.re, z.im)).unzip()
    };
    (0..traj.len())
        .step_by(stride.max(1))
        .map(|i| {
            let (rho_re, rho_im) = split(traj.states[i].matrix());
            let (rhod_re, rhod_im) = split(traj.targets[i].matrix());
            Snapshot {
                t: traj.times[i],
                rho_re,
                rho_im,
                rhod_re,
                rhod_im,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunClass {
    ConvergedToTarget,
    ConvergedToOtherCriticalPoint,
    ConvergedToOrbit,
    NonConvergent,
}

impl RunClass {
    pub const ALL: [RunClass; 4] = [
        RunClass::ConvergedToTarget,
        RunClass::ConvergedToOtherCriticalPoint,
        RunClass::ConvergedToOrbit,
        RunClass::NonConvergent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunClass::ConvergedToTarget => "converged_to_target",
            RunClass::ConvergedToOtherCriticalPoint => "converged_to_other_critical_point",
            RunClass::ConvergedToOrbit => "converged_to_orbit",
            RunClass::NonConvergent => "non_convergent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceThresholds {
    pub v_target_tol: f64,
    /// `||[rho, rho_d]||_F` below this (with V above `v_target_tol`) means the
    /// state sits at a permutation state of the target.
    pub commutator_tol: f64,
    pub orbit_tol: f64,
    /// Fraction of recorded samples, counted from the end, that is averaged.
    pub final_window: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self {
            v_target_tol: 1e-4,
            commutator_tol: 1e-3,
            orbit_tol: 1e-3,
            final_window: 0.1,
        }
    }
}

/// Means over the final window of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalWindow {
    pub v: f64,
    pub commutator: f64,
    pub dist_orbit: Option<f64>,
}

pub fn final_window(traj: &Trajectory, fraction: f64) -> FinalWindow {
    let n = traj.len();
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let range = n - k..n;
    let mean = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / k as f64;
    FinalWindow {
        v: mean(&mut traj.lyapunov[range.clone()].iter().copied()),
        commutator: mean(&mut range.clone().map(|i| {
            let (a, b) = (traj.states[i].matrix(), traj.targets[i].matrix());
            (&(a * b) - &(b * a)).frobenius_norm()
        })),
        dist_orbit: (!traj.dist_orbit.is_empty())
            .then(|| mean(&mut traj.dist_orbit[range].iter().copied())),
    }
}

/// Applies target > other critical point > orbit > non-convergent, in that
/// order, to the final-window means.
pub fn classify_run(traj: &Trajectory, th: &ConvergenceThresholds) -> (RunClass, FinalWindow) {
    let w = final_window(traj, th.final_window);
    let class = if w.v < th.v_target_tol {
        RunClass::ConvergedToTarget
    } else if w.commutator < th.commutator_tol {
        RunClass::ConvergedToOtherCriticalPoint
    } else if w.dist_orbit.is_some_and(|d| d < th.orbit_tol) {
        RunClass::ConvergedToOrbit
    } else {
        RunClass::NonConvergent
    };
    (class, w)
}

/// Real representation of a system: `A0 = Ad_{-iH0}`, `A1 = Ad_{-iH1}`.
#[derive(Clone, Debug)]
pub struct BlochSystem {
    pub basis: GellMannBasis,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub kappa: f64,
    pub target0: BlochVector,
}

impl BlochSystem {
    pub fn new(sys: &ControlSystem) -> Result<Self> {
        let basis = bloch::build_basis(sys.dim())?;
        let a0 = bloch::adjoint_matrix(sys.h0.matrix(), &basis)?;
        let a1 = bloch::adjoint_matrix(sys.h1.matrix(), &basis)?;
        let target0 = bloch::to_bloch(&sys.target0, &basis)?;
        Ok(Self {
            basis,
            a0,
            a1,
            kappa: sys.kappa,
            target0,
        })
    }

    /// `kappa s_d^T A1 s`.
    pub fn control(&self, s: &DVector<f64>, s_d: &DVector<f64>) -> f64 {
        self.kappa * s_d.dot(&(&self.a1 * s))
    }

    /// `exp(A t)` for a real antisymmetric `A`, via the Hermitian matrix `iA`.
    fn orthogonal_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
        let m = a.nrows();
        let ia = ComplexMatrix::from_fn(m, |r, c| C64::new(0.0, a[(r, c)]));
        let u = linalg::expm_skew(&HermitianMatrix::symmetrize(ia), t)?;
        Ok(DMatrix::from_fn(m, m, |r, c| u[(r, c)].re))
    }
}

/// Recorded samples of a Bloch-space run.
#[derive(Clone, Debug)]
pub struct BlochTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub control: Vec<f64>,
}

/// Same midpoint scheme as the density-space integrator, applied to the real
/// vectors with orthogonal propagators `exp((A0 + f A1) dt)`.
pub fn simulate_bloch(
    bsys: &BlochSystem,
    s0: &BlochVector,
    horizon: f64,
    dt: f64,
    record_stride: usize,
) -> Result<BlochTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let stride = record_stride.max(1);
    let free_full = BlochSystem::orthogonal_exp(&bsys.a0, dt)?;
    let free_half = BlochSystem::orthogonal_exp(&bsys.a0, 0.5 * dt)?;
    let mut s = s0.to_dvector();
    let mut s_d = bsys.target0.to_dvector();
    let mut out = BlochTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        targets: Vec::new(),
        control: Vec::new(),
    };
    for i in 0..=steps {
        let f = bsys.control(&s, &s_d);
        if i % stride == 0 || i == steps {
            out.times.push(i as f64 * dt);
            out.states.push(s.clone());
            out.targets.push(s_d.clone());
            out.control.push(f);
        }
        if i == steps {
            break;
        }
        let gen0 = &bsys.a0 + &bsys.a1 * f;
        let s_half = BlochSystem::orthogonal_exp(&gen0, 0.5 * dt)? * &s;
        let s_d_half = &free_half * &s_d;
        let f_mid = bsys.control(&s_half, &s_d_half);
        let gen = &bsys.a0 + &bsys.a1 * f_mid;
        s = BlochSystem::orthogonal_exp(&gen, dt)? * &s;
        s_d = &free_full * &s_d;
    }
    Ok(out)
}
