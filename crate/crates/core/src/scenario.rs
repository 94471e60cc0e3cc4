//! Scenario configuration, built-in presets, batch execution and reports.
//!
//! A scenario is a JSON document. Level indices in `couplings[].pair` and in
//! `exceptional-pseudo-pure` targets are one-based; complex numbers are
//! `[re, im]` pairs and matrices are arrays of rows of such pairs. A
//! `preset` field expands to the named built-in scenario, and any other
//! fields in the document override it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bloch;
use crate::dynamics::{
    self, ControlSystem, ConvergenceThresholds, FinalWindow, Integrator, RunClass, SimOptions,
};
use crate::error::{Error, Result};
use crate::hamiltonians;
use crate::invariance::{self, AnalysisReport, CriticalPointRecord, NamedInvariantReport};
use crate::linalg::{ComplexMatrix, HermitianMatrix, C64};
use crate::states::{self, DensityMatrix};

/// Rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    /// One-based level indices `(k, l)`, `k != l`.
    pub pair: [usize; 2],
    pub value: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// Energy levels in any order; they are sorted descending internally and
    /// every matrix in the scenario is permuted along with them.
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingSpec>,
    /// Full control matrix; alternative to `couplings`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<MatrixSpec>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Diagonal {
        values: Vec<f64>,
    },
    Matrix {
        entries: MatrixSpec,
    },
    Pure {
        amplitudes: Vec<[f64; 2]>,
    },
    /// Haar-random point on the orbit of `diag(spectrum)`.
    RandomOrbit {
        spectrum: Vec<f64>,
        seed: u64,
    },
    /// Pseudo-pure state with spectrum `{w, u}` whose only coherence sits on
    /// `pair`: `r_kk = r_ll = (w + u)/2`, `r_kl = (w - u)/2 e^{i alpha}`,
    /// every other diagonal entry `u`.
    ExceptionalPseudoPure {
        w: f64,
        u: f64,
        pair: [usize; 2],
        alpha: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Haar-random points on the target orbit; draws with
    /// `V > max_fraction_of_v_max * V_max` are rejected (use < 1 to keep
    /// away from the antipode).
    Random {
        count: usize,
        seed: u64,
        #[serde(default = "one")]
        max_fraction_of_v_max: f64,
    },
    Explicit {
        states: Vec<MatrixSpec>,
    },
    /// The target moved along its orbit to `V = level`.
    Perturbed {
        level: f64,
        count: usize,
        seed: u64,
    },
    /// Random points above the Lyapunov level of critical point `k`
    /// (one-based, stationary generic targets only).
    AboveCriticalPoint {
        k: usize,
        count: usize,
        seed: u64,
        #[serde(default)]
        include_critical_point: bool,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub name: String,
    pub rho1: MatrixSpec,
    pub rho2: MatrixSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub critical_points: bool,
    pub target_regularity: bool,
    pub pairs: Vec<PairSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub description: String,
    pub system: SystemSpec,
    pub target: TargetSpec,
    pub initial: InitialSpec,
    pub horizon: f64,
    /// `None` selects `1e-3 * 2 pi / max |omega|`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub integrator: Integrator,
    /// Approximate number of CSV rows per run.
    #[serde(default = "default_rows")]
    pub record_rows: usize,
    /// Write a snapshot sidecar with every n-th recorded state (0 = none).
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_true")]
    pub orbit_distance: bool,
    #[serde(default)]
    pub thresholds: ConvergenceThresholds,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

fn default_rows() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

/// Command-line overrides applied after preset expansion.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

impl ScenarioConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dt) = o.dt {
            self.dt = Some(dt);
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(n) = o.seeds {
            match &mut self.initial {
                InitialSpec::Random { count, .. }
                | InitialSpec::Perturbed { count, .. }
                | InitialSpec::AboveCriticalPoint { count, .. } => *count = n,
                InitialSpec::Explicit { .. } => {}
            }
        }
    }

    /// Every invariant violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.system.levels.len();
        if self.name.trim().is_empty() {
            errs.push("name: must not be empty".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!("horizon: must be positive, got {}", self.horizon));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                errs.push(format!("dt: must be positive, got {dt}"));
            } else if self.horizon > 0.0 && dt > self.horizon {
                errs.push(format!("dt: {dt} exceeds horizon {}", self.horizon));
            }
        }
        if self.record_rows < 2 {
            errs.push("record_rows: must be at least 2".into());
        }
        let th = &self.thresholds;
        for (name, v) in [
            ("thresholds.v_target_tol", th.v_target_tol),
            ("thresholds.commutator_tol", th.commutator_tol),
            ("thresholds.orbit_tol", th.orbit_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name}: must be positive, got {v}"));
            }
        }
        if !(th.final_window > 0.0 && th.final_window <= 1.0) {
            errs.push(format!(
                "thresholds.final_window: must lie in (0, 1], got {}",
                th.final_window
            ));
        }
        if n < 2 {
            errs.push(format!("system.levels: need at least 2 levels, got {n}"));
        }
        if !(self.system.kappa > 0.0 && self.system.kappa.is_finite()) {
            errs.push(format!(
                "system.kappa: must be positive, got {}",
                self.system.kappa
            ));
        }
        if !self.system.couplings.is_empty() && self.system.control.is_some() {
            errs.push("system: give either couplings or control, not both".into());
        }
        for (i, c) in self.system.couplings.iter().enumerate() {
            let [k, l] = c.pair;
            if k == 0 || l == 0 || k > n || l > n || k == l {
                errs.push(format!("system.couplings[{i}].pair: {k},{l} is not a pair of distinct levels in 1..={n}"));
            }
        }
        match &self.initial {
            InitialSpec::Random {
                count,
                max_fraction_of_v_max,
                ..
            } => {
                if *count == 0 {
                    errs.push("initial.count: must be at least 1".into());
                }
                if !(*max_fraction_of_v_max > 0.0 && *max_fraction_of_v_max <= 1.0) {
                    errs.push("initial.max_fraction_of_v_max: must lie in (0, 1]".into());
                }
            }
            InitialSpec::Perturbed { level, count, .. } => {
                if *count == 0 {
                    errs.push("initial.count: must be at least 1".into());
                }
                if !(*level > 0.0 && level.is_finite()) {
                    errs.push(format!("initial.level: must be positive, got {level}"));
                }
            }
            InitialSpec::AboveCriticalPoint {
                k,
                count,
                include_critical_point,
                ..
            } => {
                if *count == 0 && !include_critical_point {
                    errs.push("initial.count: must be at least 1".into());
                }
                if *k < 2 {
                    errs.push(format!("initial.k: must be at least 2, got {k}"));
                }
            }
            InitialSpec::Explicit { states } => {
                if states.is_empty() {
                    errs.push("initial.states: must not be empty".into());
                }
            }
        }
        if errs.is_empty() {
            if let Err(e) = self.build() {
                match e {
                    Error::Config(more) => errs.extend(more),
                    other => errs.push(other.to_string()),
                }
            }
        }
        errs
    }

    /// Resolves the system, target and initial states.
    pub fn build(&self) -> Result<BuiltScenario> {
        let n = self.system.levels.len();
        fn ctx(field: &str) -> impl Fn(Error) -> Error + '_ {
            move |e| Error::Config(vec![format!("{field}: {e}")])
        }
        let h1 = match &self.system.control {
            Some(m) => HermitianMatrix::new(matrix_from_spec(m, n).map_err(ctx("system.control"))?)
                .map_err(ctx("system.control"))?,
            None => {
                let mut m = ComplexMatrix::zeros(n);
                for c in &self.system.couplings {
                    let [k, l] = c.pair;
                    let z = C64::new(c.value[0], c.value[1]);
                    m[(k - 1, l - 1)] = z;
                    m[(l - 1, k - 1)] = z.conj();
                }
                HermitianMatrix::symmetrize(m)
            }
        };
        let target = self.build_target(n).map_err(ctx("target"))?;
        let (sys, perm) =
            ControlSystem::from_levels(&self.system.levels, &h1, self.system.kappa, &target)
                .map_err(ctx("system"))?;
        let permute = |rho: DensityMatrix| -> Result<DensityMatrix> {
            DensityMatrix::new(hamiltonians::permute_hermitian(rho.hermitian(), &perm))
        };
        let initial = self.build_initial(&sys, &permute)?;
        let pairs = self
            .analysis
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let field = format!("analysis.pairs[{i}]");
                let a = density_from_spec(&p.rho1, n)
                    .and_then(&permute)
                    .map_err(ctx(&field))?;
                let b = density_from_spec(&p.rho2, n)
                    .and_then(&permute)
                    .map_err(ctx(&field))?;
                Ok((p.name.clone(), a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let dt = self.dt.unwrap_or_else(|| sys.default_dt());
        Ok(BuiltScenario {
            sys,
            permutation: perm,
            initial,
            pairs,
            dt,
        })
    }

    fn build_target(&self, n: usize) -> Result<DensityMatrix> {
        match &self.target {
            TargetSpec::Diagonal { values } => {
                check_len(values.len(), n)?;
                DensityMatrix::from_diagonal(values)
            }
            TargetSpec::Matrix { entries } => density_from_spec(entries, n),
            TargetSpec::Pure { amplitudes } => {
                check_len(amplitudes.len(), n)?;
                let a: Vec<C64> = amplitudes.iter().map(|z| C64::new(z[0], z[1])).collect();
                DensityMatrix::pure(&a)
            }
            TargetSpec::RandomOrbit { spectrum, seed } => {
                check_len(spectrum.len(), n)?;
                Ok(states::random_isospectral(
                    &DensityMatrix::from_diagonal(spectrum)?,
                    *seed,
                ))
            }
            TargetSpec::ExceptionalPseudoPure { w, u, pair, alpha } => {
                let [k, l] = *pair;
                if k == 0 || l == 0 || k > n || l > n || k == l {
                    return Err(Error::InvalidArgument(format!("pair {k},{l} out of range")));
                }
                let mut m = ComplexMatrix::from_real_diagonal(&vec![*u; n]);
                m[(k - 1, k - 1)] = C64::new(0.5 * (w + u), 0.0);
                m[(l - 1, l - 1)] = C64::new(0.5 * (w + u), 0.0);
                let r = C64::from_polar(0.5 * (w - u), *alpha);
                m[(k - 1, l - 1)] = r;
                m[(l - 1, k - 1)] = r.conj();
                DensityMatrix::new(HermitianMatrix::new(m)?)
            }
        }
    }

    fn build_initial(
        &self,
        sys: &ControlSystem,
        permute: &dyn Fn(DensityMatrix) -> Result<DensityMatrix>,
    ) -> Result<Vec<InitialState>> {
        let target = sys.target0();
        let cfg_err = |field: &str, e: Error| Error::Config(vec![format!("{field}: {e}")]);
        match &self.initial {
            InitialSpec::Random {
                count,
                seed,
                max_fraction_of_v_max,
            } => {
                let cap = max_fraction_of_v_max * dynamics::v_max(target);
                (0..*count as u64)
                    .map(|i| {
                        let s = seed.wrapping_add(i);
                        let mut rng = states::seeded_rng(s);
                        for _ in 0..10_000 {
                            let u = states::random_unitary(sys.dim(), &mut rng);
                            let rho = target.conjugate_by(&u);
                            if *max_fraction_of_v_max >= 1.0
                                || dynamics::lyapunov(&rho, target) <= cap
                            {
                                return Ok(InitialState { seed: Some(s), rho });
                            }
                        }
                        Err(cfg_err(
                            "initial",
                            Error::InvalidArgument("rejection sampling exhausted".into()),
                        ))
                    })
                    .collect()
            }
            InitialSpec::Explicit { states } => states
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let rho = density_from_spec(m, sys.dim())
                        .and_then(permute)
                        .map_err(|e| cfg_err(&format!("initial.states[{i}]"), e))?;
                    Ok(InitialState { seed: None, rho })
                })
                .collect(),
            InitialSpec::Perturbed { level, count, seed } => (0..*count as u64)
                .map(|i| {
                    let s = seed.wrapping_add(i);
                    let rho = states::perturbed_isospectral(target, *level, s)
                        .map_err(|e| cfg_err("initial.level", e))?;
                    Ok(InitialState { seed: Some(s), rho })
                })
                .collect(),
            InitialSpec::AboveCriticalPoint {
                k,
                count,
                seed,
                include_critical_point,
            } => {
                let points = invariance::critical_points(sys).map_err(|e| cfg_err("initial", e))?;
                if *k > points.len() - 1 {
                    return Err(cfg_err(
                        "initial.k",
                        Error::InvalidArgument(format!("{k} is outside 2..={}", points.len() - 1)),
                    ));
                }
                let level = points[k - 1].lyapunov;
                let mut out = Vec::new();
                if *include_critical_point {
                    out.push(InitialState {
                        seed: None,
                        rho: points[k - 1].state(),
                    });
                }
                for i in 0..*count as u64 {
                    let s = seed.wrapping_add(i);
                    let rho = invariance::sample_above_level(target, level, s)
                        .map_err(|e| cfg_err("initial", e))?;
                    out.push(InitialState { seed: Some(s), rho });
                }
                Ok(out)
            }
        }
    }
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn matrix_from_spec(m: &MatrixSpec, n: usize) -> Result<ComplexMatrix> {
    check_len(m.len(), n)?;
    let rows = m
        .iter()
        .map(|row| {
            check_len(row.len(), n)?;
            Ok(row.iter().map(|z| C64::new(z[0], z[1])).collect())
        })
        .collect::<Result<Vec<Vec<C64>>>>()?;
    ComplexMatrix::from_rows(rows)
}

pub fn matrix_to_spec(m: &ComplexMatrix) -> MatrixSpec {
    let n = m.dim();
    (0..n)
        .map(|r| (0..n).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn density_from_spec(m: &MatrixSpec, n: usize) -> Result<DensityMatrix> {
    DensityMatrix::new(HermitianMatrix::new(matrix_from_spec(m, n)?)?)
}

#[derive(Clone, Debug)]
pub struct InitialState {
    pub seed: Option<u64>,
    pub rho: DensityMatrix,
}

#[derive(Clone, Debug)]
pub struct BuiltScenario {
    pub sys: ControlSystem,
    /// New level `i` was configured level `permutation[i]`.
    pub permutation: Vec<usize>,
    pub initial: Vec<InitialState>,
    pub pairs: Vec<(String, DensityMatrix, DensityMatrix)>,
    pub dt: f64,
}

/// Reads a scenario, expands its preset, fills defaults and validates.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    load_config_with(path, &Overrides::default())
}

/// As [`load_config`], with overrides applied before validation.
pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_with(&text, overrides)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<ScenarioConfig> {
    let raw: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![format!(
            "parse error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )])
    })?;
    let expanded = expand_preset(raw)?;
    let mut cfg: ScenarioConfig =
        serde_json::from_value(expanded).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.apply(overrides);
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(cfg)
}

fn expand_preset(raw: Value) -> Result<Value> {
    let Some(name) = raw.get("preset") else {
        return Ok(raw);
    };
    let name = name
        .as_str()
        .ok_or_else(|| Error::Config(vec!["preset: must be a string".into()]))?;
    let base = preset(name).ok_or_else(|| {
        Error::Config(vec![format!(
            "preset: unknown name {name:?} (known: {})",
            PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
        )])
    })?;
    let mut merged = serde_json::to_value(base)?;
    merge(&mut merged, raw);
    Ok(merged)
}

/// Recursive object merge; a differing `kind` tag replaces the whole object.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let kind_changed =
                matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Built-in scenarios: `(name, one-line description)`.
pub const PRESETS: [(&str, &str); 10] = [
    ("two-level-generic", "two-level ideal system, target off the equator: every run reaches the target"),
    ("two-level-equator", "two-level ideal system, target on the equator: runs reach the orbit, V plateaus anywhere in [0, V_max]"),
    ("pseudo-pure-n3", "three-level ideal system, generic pseudo-pure target: convergence to the target"),
    ("pseudo-pure-exceptional", "three-level ideal system, pseudo-pure target with a single coherence: convergence to the orbit only"),
    ("three-level-ideal-stationary", "three-level ideal system, generic diagonal target: 1 sink, 1 source, 4 saddles"),
    ("example1-commutator", "isospectral pair with a diagonal but non-zero commutator inside the invariant set"),
    ("nonstationary-generic", "three-level ideal system, random generic target: regular target and convergence"),
    ("three-level-missing-coupling", "three-level system without the 1-3 coupling: the target is a centre"),
    ("three-level-degenerate-gap", "three-level system with equal adjacent gaps: the target is a centre"),
    ("unstable-attraction", "random starts above a saddle level that still reach the target"),
];

fn ideal3_system(kappa: f64) -> SystemSpec {
    SystemSpec {
        levels: vec![1.0, 0.2, -1.2],
        couplings: unit_couplings(&[[1, 2], [1, 3], [2, 3]]),
        control: None,
        kappa,
    }
}

fn unit_couplings(pairs: &[[usize; 2]]) -> Vec<CouplingSpec> {
    pairs
        .iter()
        .map(|&pair| CouplingSpec {
            pair,
            value: [1.0, 0.0],
        })
        .collect()
}

fn base(
    name: &str,
    system: SystemSpec,
    target: TargetSpec,
    initial: InitialSpec,
    horizon: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        preset: None,
        description: PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|p| p.1.to_string())
            .unwrap_or_default(),
        system,
        target,
        initial,
        horizon,
        dt: None,
        integrator: Integrator::MidpointUnitary,
        record_rows: default_rows(),
        snapshot_stride: 0,
        orbit_distance: true,
        thresholds: ConvergenceThresholds::default(),
        analysis: AnalysisSpec::default(),
    }
}

fn commutator_pair() -> (MatrixSpec, MatrixSpec) {
    let r = |x: f64| [x, 0.0];
    let i = |x: f64| [0.0, x];
    (
        vec![
            vec![r(1. / 12.), r(-1. / 12.), r(-1. / 12.)],
            vec![r(-1. / 12.), r(11. / 24.), r(1. / 8.)],
            vec![r(-1. / 12.), r(1. / 8.), r(11. / 24.)],
        ],
        vec![
            vec![r(1. / 3.), i(-1. / 12.), i(1. / 12.)],
            vec![i(1. / 12.), r(1. / 3.), i(-1. / 4.)],
            vec![i(-1. / 12.), i(1. / 4.), r(1. / 3.)],
        ],
    )
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let stationary = TargetSpec::Diagonal {
        values: vec![0.5, 0.3, 0.2],
    };
    let two_level = SystemSpec {
        levels: vec![1.0, -1.0],
        couplings: unit_couplings(&[[1, 2]]),
        control: None,
        kappa: 1.0,
    };
    let cfg = match name {
        "two-level-generic" => base(
            name,
            two_level,
            TargetSpec::Pure {
                amplitudes: vec![[0.9238795325112867, 0.0], [0.3826834323650898, 0.0]],
            },
            InitialSpec::Random {
                count: 100,
                seed: 1000,
                max_fraction_of_v_max: 0.999,
            },
            500.0,
        ),
        "two-level-equator" => base(
            name,
            two_level,
            TargetSpec::Pure {
                amplitudes: vec![
                    [std::f64::consts::FRAC_1_SQRT_2, 0.0],
                    [std::f64::consts::FRAC_1_SQRT_2, 0.0],
                ],
            },
            InitialSpec::Random {
                count: 20,
                seed: 2000,
                max_fraction_of_v_max: 1.0,
            },
            500.0,
        ),
        "pseudo-pure-n3" => base(
            name,
            ideal3_system(3.0),
            TargetSpec::RandomOrbit {
                spectrum: vec![0.6, 0.2, 0.2],
                seed: 31,
            },
            InitialSpec::Random {
                count: 10,
                seed: 3000,
                max_fraction_of_v_max: 1.0,
            },
            500.0,
        ),
        "pseudo-pure-exceptional" => base(
            name,
            ideal3_system(3.0),
            TargetSpec::ExceptionalPseudoPure {
                w: 0.6,
                u: 0.2,
                pair: [1, 2],
                alpha: 0.3,
            },
            InitialSpec::Random {
                count: 10,
                seed: 4000,
                max_fraction_of_v_max: 1.0,
            },
            500.0,
        ),
        "three-level-ideal-stationary" => {
            let mut c = base(
                name,
                ideal3_system(3.0),
                stationary,
                InitialSpec::Random {
                    count: 20,
                    seed: 5000,
                    max_fraction_of_v_max: 1.0,
                },
                500.0,
            );
            c.analysis.critical_points = true;
            c
        }
        "example1-commutator" => {
            let (rho1, rho2) = commutator_pair();
            let mut c = base(
                name,
                ideal3_system(3.0),
                TargetSpec::Matrix {
                    entries: rho2.clone(),
                },
                InitialSpec::Explicit {
                    states: vec![rho1.clone()],
                },
                200.0,
            );
            c.analysis.pairs = vec![PairSpec {
                name: "diagonal-commutator".into(),
                rho1,
                rho2,
            }];
            c.analysis.target_regularity = true;
            c
        }
        "nonstationary-generic" => {
            let mut c = base(
                name,
                ideal3_system(3.0),
                TargetSpec::RandomOrbit {
                    spectrum: vec![0.5, 0.3, 0.2],
                    seed: 71,
                },
                InitialSpec::Random {
                    count: 10,
                    seed: 7000,
                    max_fraction_of_v_max: 1.0,
                },
                500.0,
            );
            c.analysis.target_regularity = true;
            c
        }
        "three-level-missing-coupling" => {
            let mut sys = ideal3_system(3.0);
            sys.couplings = unit_couplings(&[[1, 2], [2, 3]]);
            let mut c = base(
                name,
                sys,
                stationary,
                InitialSpec::Perturbed {
                    level: 1e-2,
                    count: 4,
                    seed: 8000,
                },
                2000.0,
            );
            c.analysis.critical_points = true;
            c
        }
        "three-level-degenerate-gap" => {
            let mut sys = ideal3_system(3.0);
            sys.levels = vec![1.0, 0.0, -1.0];
            let mut c = base(
                name,
                sys,
                stationary,
                InitialSpec::Perturbed {
                    level: 1e-2,
                    count: 4,
                    seed: 9000,
                },
                2000.0,
            );
            c.analysis.critical_points = true;
            c
        }
        "unstable-attraction" => {
            let mut c = base(
                name,
                ideal3_system(3.0),
                stationary,
                InitialSpec::AboveCriticalPoint {
                    k: 5,
                    count: 50,
                    seed: 10_000,
                    include_critical_point: true,
                },
                300.0,
            );
            c.analysis.critical_points = true;
            c
        }
        _ => return None,
    };
    Some(ScenarioConfig {
        preset: Some(name.into()),
        ..cfg
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub class: RunClass,
    pub initial_v: f64,
    pub final_v: f64,
    pub window: FinalWindow,
    pub min_dist_target: f64,
    pub min_dist_orbit: Option<f64>,
    pub vdot_residual: f64,
    /// Largest per-step increase of V divided by `dt`.
    pub max_v_increase_per_dt: f64,
    pub max_abs_control: f64,
    /// Largest eigenvalue drift of `rho(t)` and of `rho_d(t)`.
    pub spectrum_drift: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: Option<u64>,
    pub error: Option<String>,
    pub metrics: Option<RunMetrics>,
}

impl RunReport {
    pub fn class(&self) -> Option<RunClass> {
        self.metrics.as_ref().map(|m| m.class)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub thresholds: ConvergenceThresholds,
    pub dt: f64,
    pub horizon: f64,
    pub kappa: f64,
    /// Maximum of V over the target orbit (attained at the inverted permutation state).
    pub v_max: f64,
    /// `sum_k w_k^2`, an upper bound on `v_max`.
    pub sum_sq_eigenvalues: f64,
    pub total_runs: usize,
    pub failed_runs: usize,
    pub counts: BTreeMap<String, usize>,
    pub final_v_histogram: Histogram,
    pub worst_vdot_residual: f64,
    pub worst_v_increase_per_dt: f64,
    pub worst_spectrum_drift: f64,
    pub critical_points: Vec<CriticalPointRecord>,
    pub runs: Vec<RunReport>,
}

pub const HISTOGRAM_BINS: usize = 10;

/// Aggregate table over a non-empty batch.
pub fn summarize(
    reports: &[RunReport],
    cfg: &ScenarioConfig,
    built: &BuiltScenario,
    analysis: &AnalysisReport,
) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to summarize".into()));
    }
    let target = built.sys.target0();
    let v_max = dynamics::v_max(target);
    let mut counts: BTreeMap<String, usize> = RunClass::ALL
        .iter()
        .map(|c| (c.as_str().to_string(), 0))
        .collect();
    let ok: Vec<&RunMetrics> = reports.iter().filter_map(|r| r.metrics.as_ref()).collect();
    for m in &ok {
        *counts
            .get_mut(m.class.as_str())
            .expect("all classes present") += 1;
    }
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| v_max * i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let mut bins = vec![0usize; HISTOGRAM_BINS];
    for m in &ok {
        let x = if v_max > 0.0 { m.final_v / v_max } else { 0.0 };
        let b = ((x * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    let worst = |f: &dyn Fn(&RunMetrics) -> f64| ok.iter().map(|m| f(m)).fold(0.0, f64::max);
    Ok(Summary {
        scenario: cfg.name.clone(),
        thresholds: cfg.thresholds,
        dt: built.dt,
        horizon: cfg.horizon,
        kappa: built.sys.kappa(),
        v_max,
        sum_sq_eigenvalues: dynamics::sum_sq_eigenvalues(target),
        total_runs: reports.len(),
        failed_runs: reports.len() - ok.len(),
        counts,
        final_v_histogram: Histogram {
            edges,
            counts: bins,
        },
        worst_vdot_residual: worst(&|m| m.vdot_residual),
        worst_v_increase_per_dt: ok
            .iter()
            .map(|m| m.max_v_increase_per_dt)
            .fold(f64::NEG_INFINITY, f64::max),
        worst_spectrum_drift: worst(&|m| m.spectrum_drift[0].max(m.spectrum_drift[1])),
        critical_points: analysis.critical_points.clone(),
        runs: reports.to_vec(),
    })
}

pub fn render_text(s: &Summary) -> String {
    let mut out = String::new();
    let th = &s.thresholds;
    let _ = writeln!(out, "scenario: {}", s.scenario);
    let _ = writeln!(
        out,
        "thresholds: V_target_tol={:e} commutator_tol={:e} orbit_tol={:e} final_window={}",
        th.v_target_tol, th.commutator_tol, th.orbit_tol, th.final_window
    );
    let _ = writeln!(out, "dt={:e} horizon={} kappa={}", s.dt, s.horizon, s.kappa);
    let _ = writeln!(
        out,
        "V_max={:.6} sum_k w_k^2={:.6}",
        s.v_max, s.sum_sq_eigenvalues
    );
    let _ = writeln!(out, "runs: {} ({} failed)", s.total_runs, s.failed_runs);
    for (k, v) in &s.counts {
        let _ = writeln!(out, "  {k:<34} {v}");
    }
    let _ = writeln!(
        out,
        "worst vdot residual {:.3e}; worst dV per step / dt {:.3e}; worst spectrum drift {:.3e}",
        s.worst_vdot_residual, s.worst_v_increase_per_dt, s.worst_spectrum_drift
    );
    let _ = writeln!(out, "final V histogram:");
    let h = &s.final_v_histogram;
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(
            out,
            "  [{:.4}, {:.4}) {:>4} {}",
            h.edges[i],
            h.edges[i + 1],
            c,
            "#".repeat(*c.min(&60))
        );
    }
    if !s.critical_points.is_empty() {
        let _ = writeln!(out, "critical points:");
        for p in &s.critical_points {
            let max_re = p
                .eigenvalues
                .iter()
                .map(|z| z[0])
                .fold(f64::NEG_INFINITY, f64::max);
            let min_re = p
                .eigenvalues
                .iter()
                .map(|z| z[0])
                .fold(f64::INFINITY, f64::min);
            let _ = writeln!(
                out,
                "  perm {:?} diag {:?} V={:.4} Re in [{:.3e}, {:.3e}] {:?}",
                p.permutation, p.diagonal, p.lyapunov, min_re, max_re, p.classification
            );
        }
    }
    let _ = writeln!(out, "{:<40} {:<34} {:>12}", "run", "class", "final V");
    for r in &s.runs {
        match (&r.metrics, &r.error) {
            (Some(m), _) => {
                let _ = writeln!(
                    out,
                    "{:<40} {:<34} {:>12.4e}",
                    r.run_id,
                    m.class.as_str(),
                    m.final_v
                );
            }
            (None, Some(e)) => {
                let _ = writeln!(out, "{:<40} failed: {e}", r.run_id);
            }
            (None, None) => {}
        }
    }
    out
}

/// Critical points (stationary generic targets), target regularity and the
/// configured invariant-set pairs.
pub fn analyze(cfg: &ScenarioConfig, built: &BuiltScenario) -> Result<AnalysisReport> {
    let sys = &built.sys;
    let mut report = AnalysisReport::default();
    if cfg.analysis.critical_points {
        match invariance::classify_all(sys) {
            Ok(c) => {
                report.critical_points = c.points.iter().map(CriticalPointRecord::from).collect();
                report.counts = Some(c.counts);
            }
            Err(Error::InadmissibleTarget(why)) => {
                report.notes.push(format!("critical points skipped: {why}"))
            }
            Err(e) => return Err(e),
        }
    }
    if cfg.analysis.target_regularity {
        let basis = bloch::build_basis(sys.dim())?;
        report.target_regularity = Some(bloch::target_regularity(sys.target0(), &basis)?);
    }
    for (name, a, b) in &built.pairs {
        report.invariant_set_reports.push(NamedInvariantReport {
            name: name.clone(),
            report: invariance::trace_conditions(a, b, sys, invariance::default_m_max(sys.dim()))?,
        });
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub config: ScenarioConfig,
    pub analysis: AnalysisReport,
    pub summary: Summary,
}

impl ScenarioOutcome {
    pub fn failed_runs(&self) -> usize {
        self.summary.failed_runs
    }
}

fn run_one(
    cfg: &ScenarioConfig,
    built: &BuiltScenario,
    index: usize,
    init: &InitialState,
    out: Option<&Path>,
) -> RunReport {
    let run_id = format!("{}-{:03}", cfg.name, index);
    let sys = &built.sys;
    let steps = (cfg.horizon / built.dt).round().max(1.0) as usize;
    let opts = SimOptions {
        horizon: cfg.horizon,
        dt: built.dt,
        record_stride: steps.div_ceil(cfg.record_rows.max(1)).max(1),
        integrator: cfg.integrator,
        orbit_distance: cfg.orbit_distance,
    };
    let result = dynamics::simulate(sys, &init.rho, &opts).and_then(|traj| {
        if let Some(dir) = out {
            let f = fs::File::create(dir.join(format!("{run_id}.csv")))?;
            dynamics::write_csv(&traj, BufWriter::new(f))?;
            if cfg.snapshot_stride > 0 {
                let doc = serde_json::json!({
                    "run_id": run_id,
                    "snapshots": dynamics::snapshots(&traj, cfg.snapshot_stride),
                });
                fs::write(
                    dir.join(format!("{run_id}.snapshots.json")),
                    serde_json::to_string_pretty(&doc)?,
                )?;
            }
        }
        let (class, window) = dynamics::classify_run(&traj, &cfg.thresholds);
        let d = &traj.step_diagnostics;
        let (drift_state, drift_target) = traj.spectrum_drift();
        Ok(RunMetrics {
            class,
            initial_v: traj.lyapunov[0],
            final_v: traj.final_v(),
            window,
            min_dist_target: d.min_dist_target,
            min_dist_orbit: traj.min_dist_orbit(),
            vdot_residual: d.vdot_residual,
            max_v_increase_per_dt: d.max_v_increase / built.dt,
            max_abs_control: d.max_abs_control,
            spectrum_drift: [drift_state, drift_target],
        })
    });
    match result {
        Ok(m) => RunReport {
            run_id,
            seed: init.seed,
            error: None,
            metrics: Some(m),
        },
        Err(e) => RunReport {
            run_id,
            seed: init.seed,
            error: Some(e.to_string()),
            metrics: None,
        },
    }
}

/// Runs every initial state (concurrently when the `parallel` feature is on),
/// then writes `analysis.json`, `summary.json` and `summary.txt` to `out`.
/// A failing run is recorded in its report and does not stop the batch.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<ScenarioOutcome> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let built = cfg.build()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let analysis = analyze(cfg, &built)?;
    let reports = crate::par_map(0..built.initial.len(), |i| {
        run_one(cfg, &built, i, &built.initial[i], out)
    });
    let summary = summarize(&reports, cfg, &built, &analysis)?;
    if let Some(dir) = out {
        write_analysis(dir, &analysis)?;
        let doc = serde_json::json!({ "config": cfg, "summary": &summary });
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&doc)? + "\n",
        )?;
        fs::write(dir.join("summary.txt"), render_text(&summary))?;
    }
    Ok(ScenarioOutcome {
        config: cfg.clone(),
        analysis,
        summary,
    })
}

pub fn write_analysis(dir: &Path, analysis: &AnalysisReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("analysis.json"),
        serde_json::to_string_pretty(analysis)? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "name": "mini",
            "system": { "levels": [1.0, -1.0], "couplings": [{ "pair": [1, 2], "value": [1.0, 0.0] }] },
            "target": { "kind": "diagonal", "values": [0.8, 0.2] },
            "initial": { "kind": "random", "count": 2, "seed": 1 },
            "horizon": 1.0
        }"#
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(minimal()).unwrap();
        assert_eq!(cfg.system.kappa, 1.0);
        assert_eq!(cfg.dt, None);
        assert_eq!(cfg.record_rows, 2000);
        assert_eq!(cfg.thresholds, ConvergenceThresholds::default());
        let built = cfg.build().unwrap();
        assert_eq!(built.dt, 1e-3);
    }

    #[test]
    fn non_positive_dt_is_rejected_by_name() {
        let text = minimal().replace("\"horizon\": 1.0", "\"horizon\": -1.0, \"dt\": 0.0");
        match parse_config(&text) {
            Err(Error::Config(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("dt:")));
                assert!(errs.iter().any(|e| e.starts_with("horizon:")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_config("{\n  \"name\": \"x\",\n  oops\n}") {
            Err(Error::Config(errs)) => assert!(errs[0].contains("line 3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal().replace("\"horizon\"", "\"horizn\": 1, \"horizon\"");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
    }

    #[test]
    fn all_presets_validate() {
        for (name, _) in PRESETS {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.validate(), Vec::<String>::new(), "{name}");
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(parse_config(&text).unwrap(), cfg, "{name} round trip");
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn commutator_preset_builds_its_pair() {
        let cfg = parse_config(r#"{"preset": "example1-commutator"}"#).unwrap();
        let built = cfg.build().unwrap();
        let target = built.sys.target0().matrix();
        assert_eq!(target[(0, 0)], C64::new(1.0 / 3.0, 0.0));
        assert_eq!(target[(1, 2)], C64::new(0.0, -0.25));
        assert_eq!(
            built.initial[0].rho.matrix()[(1, 1)],
            C64::new(11.0 / 24.0, 0.0)
        );
    }

    #[test]
    fn preset_fields_can_be_overridden() {
        let cfg = parse_config(
            r#"{"preset": "two-level-generic", "horizon": 5, "initial": {"count": 3}}"#,
        )
        .unwrap();
        assert_eq!(cfg.horizon, 5.0);
        assert!(matches!(
            cfg.initial,
            InitialSpec::Random {
                count: 3,
                seed: 1000,
                ..
            }
        ));
        let cfg = parse_config(r#"{"preset": "two-level-generic", "initial": {"kind": "perturbed", "level": 0.01, "count": 1, "seed": 4}}"#).unwrap();
        assert!(matches!(cfg.initial, InitialSpec::Perturbed { .. }));
        assert!(parse_config(r#"{"preset": "no-such-preset"}"#).is_err());
    }

    #[test]
    fn unsorted_levels_permute_every_matrix() {
        let text = r#"{
            "name": "perm",
            "system": { "levels": [-1.0, 1.0], "couplings": [{ "pair": [1, 2], "value": [0.5, 0.0] }] },
            "target": { "kind": "diagonal", "values": [0.8, 0.2] },
            "initial": { "kind": "explicit", "states": [[[[0.7, 0], [0, 0]], [[0, 0], [0.3, 0]]]] },
            "horizon": 1.0
        }"#;
        let built = parse_config(text).unwrap().build().unwrap();
        assert_eq!(built.permutation, vec![1, 0]);
        assert_eq!(
            built.sys.target0().hermitian().real_diagonal(),
            vec![0.2, 0.8]
        );
        assert_eq!(
            built.initial[0].rho.hermitian().real_diagonal(),
            vec![0.3, 0.7]
        );
    }

    #[test]
    fn invalid_target_is_reported() {
        let text = minimal().replace("[0.8, 0.2]", "[0.8, 0.3]");
        match parse_config(&text) {
            Err(Error::Config(errs)) => assert!(errs[0].starts_with("target:")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exceptional_target_is_pseudo_pure_with_one_coherence() {
        let cfg = preset("pseudo-pure-exceptional").unwrap();
        let built = cfg.build().unwrap();
        let t = built.sys.target0();
        let ev = t.eigenvalues();
        for (a, b) in ev.iter().zip([0.6, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.matrix()[(0, 1)] - C64::from_polar(0.2, 0.3)).norm() < 1e-15);
        assert_eq!(t.matrix()[(0, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn summary_of_single_converged_run() {
        let text = minimal().replace("\"count\": 2", "\"count\": 1").replace(
            "\"kind\": \"random\"",
            "\"kind\": \"perturbed\", \"level\": 1e-9",
        );
        let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{e}"));
        let outcome = run_scenario(&cfg, None).unwrap();
        assert_eq!(outcome.summary.total_runs, 1);
        assert_eq!(outcome.summary.counts["converged_to_target"], 1);
        assert_eq!(outcome.summary.counts.values().sum::<usize>(), 1);
        let text = render_text(&outcome.summary);
        assert!(text.contains("V_target_tol=1e-4"));
        assert!(text.contains("mini-000"));
    }

    #[test]
    fn summarize_rejects_empty_batch() {
        let cfg = parse_config(minimal()).unwrap();
        let built = cfg.build().unwrap();
        assert!(summarize(&[], &cfg, &built, &AnalysisReport::default()).is_err());
    }

    #[test]
    fn outputs_are_written_and_deterministic() {
        let cfg = parse_config(&minimal().replace(
            "\"horizon\": 1.0",
            "\"horizon\": 2.0, \"snapshot_stride\": 500",
        ))
        .unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_scenario(&cfg, Some(a.path())).unwrap();
        run_scenario(&cfg, Some(b.path())).unwrap();
        for f in [
            "mini-000.csv",
            "mini-001.csv",
            "mini-000.snapshots.json",
            "analysis.json",
            "summary.json",
            "summary.txt",
        ] {
            let x = fs::read(a.path().join(f)).unwrap();
            let y = fs::read(b.path().join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, y, "{f}");
        }
    }
}
