//! Browser bindings. Each export returns a JSON string; the plain functions
//! underneath are what the native tests exercise.

use qlyap_core::dynamics::{self, ControlSystem, SimOptions};
use qlyap_core::hamiltonians::{ControlHamiltonian, DriftHamiltonian};
use qlyap_core::invariance;
use qlyap_core::linalg::{ComplexMatrix, C64};
use qlyap_core::states::{self, DensityMatrix};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_POINTS: usize = 600;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn pure_qubit(theta: f64, phi: f64) -> Result<DensityMatrix, String> {
    let a = [
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ];
    DensityMatrix::pure(&a).map_err(err)
}

/// `(<sigma_x>, <sigma_y>, <sigma_z>)`.
fn pauli(m: &ComplexMatrix) -> [f64; 3] {
    let c = m[(0, 1)];
    [2.0 * c.re, -2.0 * c.im, (m[(0, 0)] - m[(1, 1)]).re]
}

fn stride_for(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) as usize / MAX_POINTS).max(1)
}

/// Two-level system `H0 = diag(1, -1)`, `H1 = sigma_x`, pure target and
/// initial state given by Bloch-sphere angles.
pub fn bloch_trajectory_json(
    target_theta: f64,
    target_phi: f64,
    init_theta: f64,
    init_phi: f64,
    kappa: f64,
    horizon: f64,
) -> Result<Value, String> {
    let target = pure_qubit(target_theta, target_phi)?;
    let rho0 = pure_qubit(init_theta, init_phi)?;
    let sys = ControlSystem::new(
        DriftHamiltonian::new(&[1.0, -1.0]).map_err(err)?,
        ControlHamiltonian::fully_connected_unit(2),
        kappa,
        target,
    )
    .map_err(err)?;
    let dt = sys.default_dt();
    let opts = SimOptions::new(horizon, dt)
        .with_stride(stride_for(horizon, dt))
        .without_orbit();
    let traj = dynamics::simulate(&sys, &rho0, &opts).map_err(err)?;
    let (class, _) = dynamics::classify_run(&traj, &Default::default());
    Ok(json!({
        "t": traj.times,
        "state": traj.states.iter().map(|r| pauli(r.matrix())).collect::<Vec<_>>(),
        "target": traj.targets.iter().map(|r| pauli(r.matrix())).collect::<Vec<_>>(),
        "V": traj.lyapunov,
        "f": traj.control,
        "v_max": traj.v_max,
        "class": class.as_str(),
    }))
}

fn three_level(
    levels: &[f64],
    couplings: &[f64],
    kappa: f64,
    target: DensityMatrix,
) -> Result<ControlSystem, String> {
    if couplings.len() != 3 {
        return Err("expected three couplings b12, b13, b23".into());
    }
    let h1 = ControlHamiltonian::from_couplings(
        3,
        &[
            ((0, 1), C64::new(couplings[0], 0.0)),
            ((0, 2), C64::new(couplings[1], 0.0)),
            ((1, 2), C64::new(couplings[2], 0.0)),
        ],
    )
    .map_err(err)?;
    ControlSystem::new(
        DriftHamiltonian::new(levels).map_err(err)?,
        h1,
        kappa,
        target,
    )
    .map_err(err)
}

/// The six permutation states of a diagonal three-level target with their
/// linearized stability.
pub fn critical_points_json(
    weights: &[f64],
    levels: &[f64],
    couplings: &[f64],
    kappa: f64,
) -> Result<Value, String> {
    let target = DensityMatrix::from_diagonal(weights).map_err(err)?;
    let sys = three_level(levels, couplings, kappa, target)?;
    let c = invariance::classify_all(&sys).map_err(err)?;
    let rows: Vec<Value> = c
        .points
        .iter()
        .map(|p| {
            json!({
                "diagonal": p.diagonal,
                "V": p.lyapunov,
                "is_target": p.is_target,
                "stability": format!("{:?}", p.classification).to_lowercase(),
                "min_abs_real": p.min_abs_real,
                "eigenvalues": p.jacobian_spectrum.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({
        "points": rows,
        "ideal": sys.is_ideal(),
        "counts": {
            "sink": c.counts.sinks,
            "source": c.counts.sources,
            "saddle": c.counts.saddles,
            "centre": c.counts.centres,
            "degenerate": c.counts.degenerate,
        },
    }))
}

/// V(t) from one perturbed start under the ideal system and under a variant
/// (`missing-coupling` or `degenerate-gap`), same target and start.
pub fn lyapunov_comparison_json(
    variant: &str,
    level: f64,
    seed: u64,
    horizon: f64,
) -> Result<Value, String> {
    let weights = [0.5, 0.3, 0.2];
    let ideal_levels = [1.0, 0.2, -1.2];
    let (levels, couplings): ([f64; 3], [f64; 3]) = match variant {
        "missing-coupling" => (ideal_levels, [1.0, 0.0, 1.0]),
        "degenerate-gap" => ([1.0, 0.0, -1.0], [1.0, 1.0, 1.0]),
        other => return Err(format!("unknown variant {other:?}")),
    };
    let target = DensityMatrix::from_diagonal(&weights).map_err(err)?;
    let ideal = three_level(&ideal_levels, &[1.0, 1.0, 1.0], 3.0, target.clone())?;
    let other = three_level(&levels, &couplings, 3.0, target.clone())?;
    let rho0 = states::perturbed_isospectral(&target, level, seed).map_err(err)?;
    let run = |sys: &ControlSystem| -> Result<dynamics::Trajectory, String> {
        let dt = sys.default_dt();
        let opts = SimOptions::new(horizon, dt)
            .with_stride(stride_for(horizon, dt))
            .without_orbit();
        dynamics::simulate(sys, &rho0, &opts).map_err(err)
    };
    let a = run(&ideal)?;
    let b = run(&other)?;
    Ok(json!({
        "t": a.times,
        "ideal": a.lyapunov,
        "variant": b.lyapunov,
        "variant_ideal": other.is_ideal(),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bloch_trajectory(
    target_theta: f64,
    target_phi: f64,
    init_theta: f64,
    init_phi: f64,
    kappa: f64,
    horizon: f64,
) -> Result<String, JsError> {
    to_js(bloch_trajectory_json(
        target_theta,
        target_phi,
        init_theta,
        init_phi,
        kappa,
        horizon,
    ))
}

#[wasm_bindgen]
pub fn critical_points(
    weights: &[f64],
    levels: &[f64],
    couplings: &[f64],
    kappa: f64,
) -> Result<String, JsError> {
    to_js(critical_points_json(weights, levels, couplings, kappa))
}

#[wasm_bindgen]
pub fn lyapunov_comparison(
    variant: &str,
    level: f64,
    seed: u32,
    horizon: f64,
) -> Result<String, JsError> {
    to_js(lyapunov_comparison_json(
        variant,
        level,
        u64::from(seed),
        horizon,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn generic_qubit_target_is_reached() {
        let v = bloch_trajectory_json(PI / 4.0, 0.0, 2.0, 1.0, 1.0, 200.0).unwrap();
        assert_eq!(v["class"], "converged_to_target");
        let vs = v["V"].as_array().unwrap();
        assert!(vs.len() <= MAX_POINTS + 2);
        assert!(vs.last().unwrap().as_f64().unwrap() < 1e-4);
        let s = v["state"][0].as_array().unwrap();
        let r: f64 = s.iter().map(|x| x.as_f64().unwrap().powi(2)).sum();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pauli_coordinates_of_basis_states() {
        let up = pure_qubit(0.0, 0.0).unwrap();
        assert_eq!(pauli(up.matrix()), [0.0, 0.0, 1.0]);
        let plus_y = pure_qubit(PI / 2.0, PI / 2.0).unwrap();
        let p = pauli(plus_y.matrix());
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn ideal_table_has_one_sink() {
        let v = critical_points_json(&[0.5, 0.3, 0.2], &[1.0, 0.2, -1.2], &[1.0, 1.0, 1.0], 3.0)
            .unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 6);
        assert_eq!(v["counts"]["sink"], 1);
        assert_eq!(v["counts"]["saddle"], 4);
        assert_eq!(v["ideal"], true);
        let missing =
            critical_points_json(&[0.5, 0.3, 0.2], &[1.0, 0.2, -1.2], &[1.0, 0.0, 1.0], 3.0)
                .unwrap();
        assert_eq!(missing["ideal"], false);
        assert_eq!(missing["points"][0]["stability"], "centre");
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(critical_points_json(&[0.5, 0.5, 0.2], &[1.0, 0.2, -1.2], &[1.0; 3], 1.0).is_err());
        assert!(critical_points_json(&[0.5, 0.3, 0.2], &[1.0, 0.2, -1.2], &[1.0; 2], 1.0).is_err());
        assert!(lyapunov_comparison_json("nope", 1e-2, 1, 10.0).is_err());
        assert!(bloch_trajectory_json(0.5, 0.0, 1.0, 0.0, -1.0, 10.0).is_err());
    }

    #[test]
    fn variant_plateaus_while_ideal_decays() {
        let v = lyapunov_comparison_json("degenerate-gap", 1e-2, 9000, 300.0).unwrap();
        let last = |k: &str| v[k].as_array().unwrap().last().unwrap().as_f64().unwrap();
        assert!(last("ideal") < 1e-6);
        assert!(last("variant") > 1e-3);
        assert_eq!(v["variant_ideal"], false);
    }
}
