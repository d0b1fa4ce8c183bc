//! Python bindings: threshold formulas, sequence alignment and whole runs.

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rcms::engine::{self, Scenario};
use rcms::protocol;
use rcms::srp;
use rcms::types::{CompetitiveMode, Scaling, VehicleId, VehicleState, Vec2};

/// `(x, y, vx, vy)` of one vehicle.
type Kin = (f64, f64, f64, f64);

fn state((x, y, vx, vy): Kin) -> VehicleState {
    VehicleState::new(VehicleId(0), Vec2::new(x, y), Vec2::new(vx, vy), 0.0)
}

fn scaling(distance_scale: f64, speed_scale: f64) -> Scaling {
    Scaling {
        distance: distance_scale,
        speed: speed_scale,
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
#[pyo3(signature = (ordinary, core, tti, lam=1.0, congestion_threshold=1.5, distance_scale=1.0, speed_scale=1.0))]
fn cooperative_threshold(
    ordinary: Kin,
    core: Kin,
    tti: f64,
    lam: f64,
    congestion_threshold: f64,
    distance_scale: f64,
    speed_scale: f64,
) -> f64 {
    protocol::cooperative_threshold(
        &state(ordinary),
        &state(core),
        tti,
        lam,
        congestion_threshold,
        scaling(distance_scale, speed_scale),
    )
}

/// `mode` is `centered` or `verbatim`.
#[pyfunction]
#[pyo3(signature = (candidate, members, lam=1.0, mode="centered", distance_scale=1.0))]
fn competitive_threshold(candidate: Kin, members: Vec<Kin>, lam: f64, mode: &str, distance_scale: f64) -> PyResult<f64> {
    let mode = match mode {
        "centered" => CompetitiveMode::Centered,
        "verbatim" => CompetitiveMode::Verbatim,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let members: Vec<VehicleState> = members.into_iter().map(state).collect();
    protocol::competitive_threshold(&state(candidate), &members, lam, mode, scaling(distance_scale, 1.0))
        .map_err(value_err)
}

/// `cores` pairs each core with its cooperative threshold.
#[pyfunction]
#[pyo3(signature = (gateway, cores, distance_scale=1.0))]
fn aggregation_threshold(gateway: Kin, cores: Vec<(Kin, f64)>, distance_scale: f64) -> PyResult<f64> {
    let cores: Vec<(VehicleState, f64)> = cores.into_iter().map(|(k, t)| (state(k), t)).collect();
    protocol::aggregation_threshold(&state(gateway), &cores, scaling(distance_scale, 1.0)).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (core, member, distance_scale=1.0, speed_scale=1.0))]
fn decomposition_value(core: Kin, member: Kin, distance_scale: f64, speed_scale: f64) -> f64 {
    protocol::decomposition_value(&state(core), &state(member), scaling(distance_scale, speed_scale))
}

/// Length-normalised DTW distance and its warping path.
#[pyfunction]
fn dtw(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, Vec<(usize, usize)>)> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    let (d, path) = srp::dtw(a.view(), b.view()).map_err(value_err)?;
    Ok((d, path.cells))
}

#[pyfunction]
fn soft_dtw(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    srp::soft_dtw(a.view(), b.view(), gamma).map_err(value_err)
}

/// Parses and checks a scenario; raises `ValueError` on the first problem.
#[pyfunction]
fn validate_scenario(toml: &str) -> PyResult<()> {
    Scenario::from_toml_str(toml, None).map(|_| ()).map_err(value_err)
}

/// Runs a scenario given as TOML text. Returns a dict with `metrics`
/// (name to value), `events` (the event log text) and `violations`.
#[pyfunction]
#[pyo3(signature = (toml, seed=None))]
fn run<'py>(py: Python<'py>, toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut sc = Scenario::from_toml_str(toml, None).map_err(value_err)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let out = py
        .detach(|| engine::run(&sc))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let metrics = PyDict::new(py);
    for (name, value) in out.ledger.scalars() {
        metrics.set_item(name, value)?;
    }
    let result = PyDict::new(py);
    result.set_item("metrics", metrics)?;
    result.set_item("events", out.log.to_text())?;
    result.set_item("violations", out.violations)?;
    Ok(result)
}

#[pymodule]
fn rcms_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cooperative_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(competitive_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(aggregation_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(decomposition_value, m)?)?;
    m.add_function(wrap_pyfunction!(dtw, m)?)?;
    m.add_function(wrap_pyfunction!(soft_dtw, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
