//! Python module `twofold`: models, trajectories, return maps and cycles.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use twofold_core::fate::{classify_point, FateThresholds};
use twofold_core::integrate::{self, EscapingPolicy, IntegrateError, StepperConfig};
use twofold_core::models::{Model, ModelSpec, PerturbationSpec};
use twofold_core::returnmap::{self, SigmaPoint, Stability};
use twofold_core::sliding;
use twofold_core::system::{classify_sigma_point, Point3};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn policy(name: &str) -> PyResult<EscapingPolicy> {
    name.parse().map_err(value_err)
}

fn stability(s: Stability) -> &'static str {
    match s {
        Stability::Attractor => "attractor",
        Stability::Repeller => "repeller",
        Stability::NonHyperbolic => "non-hyperbolic",
    }
}

type Iterates = (Vec<(f64, f64)>, Vec<f64>);
type Linearization = ([[f64; 2]; 2], (f64, f64));

/// A registered model: `z0`, `z-eps-finite` (k, epsilon) or
/// `z-eps-infinite` (epsilon).
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Model,
}

impl PyModel {
    fn perturbation(&self) -> Option<PerturbationSpec> {
        self.inner.perturbation()
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (id="z0", k=None, epsilon=None))]
    fn new(id: &str, k: Option<u32>, epsilon: Option<f64>) -> PyResult<Self> {
        let spec = match (id, k, epsilon) {
            ("z0", None, None) => ModelSpec::Z0,
            ("z-eps-finite", Some(k), Some(epsilon)) => ModelSpec::ZEpsFinite { k, epsilon },
            ("z-eps-infinite", None, Some(epsilon)) => ModelSpec::ZEpsInfinite { epsilon },
            _ => return Err(PyValueError::new_err(format!("bad model spec: id={id:?}, k={k:?}, epsilon={epsilon:?}"))),
        };
        spec.validate().map_err(value_err)?;
        Ok(Self { inner: spec.build() })
    }

    #[getter]
    fn id(&self) -> &'static str {
        self.inner.spec.id()
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.inner.spec)
    }

    /// `(X(p), Y(p))` at a point of ℝ³.
    fn fields(&self, p: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let q = Point3::new(p[0], p[1], p[2]);
        let x = self.inner.system.upper.eval(&q);
        let y = self.inner.system.lower.eval(&q);
        ([x.x, x.y, x.z], [y.x, y.y, y.z])
    }

    /// Region label of a Σ point `(x, y)`.
    fn region(&self, x: f64, y: f64) -> PyResult<&'static str> {
        classify_sigma_point(&self.inner.system, &Point3::new(x, y, 0.0)).map(|r| r.label()).map_err(value_err)
    }

    /// Normalized sliding vector `(Y.f)X − (X.f)Y` at `(x, y, 0)`.
    fn normalized_sliding(&self, x: f64, y: f64) -> PyResult<[f64; 3]> {
        let (n, _, _) = sliding::normalized_raw(&self.inner.system, &Point3::new(x, y, 0.0)).map_err(value_err)?;
        Ok([n.x, n.y, n.z])
    }

    /// Closed-form flow of the upper (`side="upper"`) or lower field.
    #[pyo3(signature = (t, p, side="upper"))]
    fn flow(&self, t: f64, p: [f64; 3], side: &str) -> PyResult<[f64; 3]> {
        let s = match side {
            "upper" => twofold_core::Side::Upper,
            "lower" => twofold_core::Side::Lower,
            _ => return Err(PyValueError::new_err("side must be 'upper' or 'lower'")),
        };
        let q = self.inner.flow(s).flow(t, &Point3::new(p[0], p[1], p[2]));
        Ok([q.x, q.y, q.z])
    }

    /// Integrate from `p` up to `t_max`. Returns a dict with `t`, `points`,
    /// `modes`, `events`, `termination`, and `error` (set when integration
    /// stopped early, e.g. on escape).
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (p, t_max, policy="upper", rel_tol=1e-10, abs_tol=1e-12, max_step=0.1))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        p: [f64; 3],
        t_max: f64,
        policy: &str,
        rel_tol: f64,
        abs_tol: f64,
        max_step: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = StepperConfig { rel_tol, abs_tol, max_step, escaping_policy: self::policy(policy)?, ..Default::default() };
        let q = Point3::new(p[0], p[1], p[2]);
        let out = py.detach(|| integrate::advance(&self.inner.system, &q, t_max, &cfg));
        let (tr, err) = match &out {
            Ok(t) => (t, None),
            Err(e @ (IntegrateError::System(_) | IntegrateError::InvalidConfig(_))) => return Err(value_err(e)),
            Err(e) => match e.trajectory() {
                Some(t) => (t, Some(e.to_string())),
                None => return Err(PyRuntimeError::new_err(e.to_string())),
            },
        };
        let d = PyDict::new(py);
        let samples: Vec<_> = tr.samples().collect();
        d.set_item("t", samples.iter().map(|s| s.1).collect::<Vec<_>>())?;
        d.set_item("points", samples.iter().map(|s| [s.2.x, s.2.y, s.2.z]).collect::<Vec<_>>())?;
        d.set_item("modes", samples.iter().map(|s| s.0.label()).collect::<Vec<_>>())?;
        let events: Vec<(f64, [f64; 3], &str)> =
            tr.events.iter().map(|e| (e.t, [e.point.x, e.point.y, e.point.z], e.region.label())).collect();
        d.set_item("events", events)?;
        d.set_item("termination", format!("{:?}", tr.termination))?;
        d.set_item("error", err)?;
        Ok(d)
    }

    /// First return `φ_Y∘φ_X` of the Σ point `(x, y)`: `((x', y'), period)`.
    fn first_return(&self, x: f64, y: f64) -> PyResult<((f64, f64), f64)> {
        let r = returnmap::first_return(&SigmaPoint::new(x, y), self.perturbation().as_ref()).map_err(value_err)?;
        Ok(((r.point.x, r.point.y), r.period()))
    }

    /// Lower half-return of `(x, y)`.
    fn half_return_y(&self, x: f64, y: f64) -> PyResult<(f64, f64)> {
        let r = returnmap::half_return_y(&SigmaPoint::new(x, y), self.perturbation().as_ref()).map_err(value_err)?;
        Ok((r.point.x, r.point.y))
    }

    /// Iterates of the first return and their distances to r₀.
    fn iterate_return(&self, x: f64, y: f64, n: usize) -> PyResult<Iterates> {
        let r = returnmap::iterate_return(&SigmaPoint::new(x, y), n, self.perturbation().as_ref()).map_err(value_err)?;
        Ok((r.points.iter().map(|p| (p.x, p.y)).collect(), r.distances))
    }

    /// Jacobian of the first return at `(x0, −x0)` and its real eigenvalues.
    fn linearized_return(&self, x0: f64) -> PyResult<Linearization> {
        let l = returnmap::linearized_return(x0, self.perturbation().as_ref()).map_err(value_err)?;
        let j = l.jacobian;
        Ok(([[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]], (l.eigen.values[0].re, l.eigen.values[1].re)))
    }

    /// Limit cycles crossing r₀ at `x0 ∈ (a, b)`; list of dicts.
    #[pyo3(signature = (a, b, grid_n=2000))]
    fn find_cycles<'py>(&self, py: Python<'py>, a: f64, b: f64, grid_n: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let Some(spec) = self.perturbation() else {
            return Ok(vec![]);
        };
        let cycles = py.detach(|| returnmap::find_cycles(&spec, (a, b), grid_n)).map_err(value_err)?;
        cycles
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("x0", c.x0)?;
                d.set_item("period", c.period)?;
                d.set_item("multiplier", c.multiplier)?;
                d.set_item("multiplier_minus_one", c.multiplier_minus_one)?;
                d.set_item("stability", stability(c.stability))?;
                d.set_item("j", c.j)?;
                Ok(d)
            })
            .collect()
    }

    /// `(cell, predicted, observed)` fate labels for the Σ point `(x, y)`.
    #[pyo3(signature = (x, y, policy="upper", t_max=200.0))]
    fn classify_fate(&self, py: Python<'_>, x: f64, y: f64, policy: &str, t_max: f64) -> PyResult<(String, Option<String>, String)> {
        let cfg = StepperConfig::default().with_policy(self::policy(policy)?);
        let th = FateThresholds { t_max, ..Default::default() };
        let r = py.detach(|| classify_point(&self.inner, x, y, &cfg, &[], &th));
        Ok((r.cell.label().into(), r.predicted.map(|p| p.label().into()), r.observed.label().into()))
    }
}

/// Positive fly time of the upper flow from the Σ point `(x, y)`, `y < 0`.
#[pyfunction]
fn x_fly_time(x: f64, y: f64) -> PyResult<f64> {
    returnmap::x_fly_time(&SigmaPoint::new(x, y)).map(|r| r.t).map_err(value_err)
}

/// Upper half-return of `(x, y)`.
#[pyfunction]
fn half_return_x(x: f64, y: f64) -> PyResult<(f64, f64)> {
    returnmap::half_return_x(&SigmaPoint::new(x, y)).map(|r| (r.point.x, r.point.y)).map_err(value_err)
}

#[pymodule]
fn twofold(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(x_fly_time, m)?)?;
    m.add_function(wrap_pyfunction!(half_return_x, m)?)?;
    Ok(())
}
