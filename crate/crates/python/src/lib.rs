//! Python bindings. Cell fields cross the boundary as flat lists of floats in
//! partition order (`iy·px + ix`), cell sets as lists of indices.

use gramflow::control::{min_energy_control, ControlOptions};
use gramflow::gramian::{
    finite_gramian, infinite_controllability_gramian, infinite_observability_gramian, residence_time,
    stability_certificate, Quadrature, Stability,
};
use gramflow::placement::{rank_placements, score_candidates, DEFAULT_TIE_TOL};
use gramflow::transfer::{apply_koopman, apply_pf};
use gramflow::{
    AnalyticField, BoundaryPolicy, BoxPartition, CellSet, ControlMethod, Domain, GramianKind, InfiniteOptions,
    NormDirection, PlacementMode, Propagator, ScalarField, TransferOperator, UlamSettings,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pygramflow, Infeasible, PyException, "The request has no solution for this operator.");

fn py_err(e: gramflow::Error) -> PyErr {
    if e.is_infeasible() {
        Infeasible::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_boundary(s: &str) -> PyResult<BoundaryPolicy> {
    match s {
        "clamp" | "clamp-to-boundary" => Ok(BoundaryPolicy::Clamp),
        "absorb" | "absorb-outside" => Ok(BoundaryPolicy::Absorb),
        _ => Err(PyValueError::new_err(format!("unknown boundary policy {s:?}"))),
    }
}

fn parse_kind(s: &str) -> PyResult<GramianKind> {
    match s {
        "controllability" => Ok(GramianKind::Controllability),
        "observability" => Ok(GramianKind::Observability),
        _ => Err(PyValueError::new_err(format!("unknown gramian kind {s:?}"))),
    }
}

fn parse_method(s: &str) -> PyResult<ControlMethod> {
    match s {
        "multiplication" => Ok(ControlMethod::Multiplication),
        "exact" => Ok(ControlMethod::Exact),
        _ => Err(PyValueError::new_err(format!("unknown control method {s:?}"))),
    }
}

/// Ulam transfer operator on a box partition.
#[pyclass(frozen, name = "TransferOperator")]
struct PyOperator {
    inner: TransferOperator,
}

impl PyOperator {
    fn part(&self) -> BoxPartition {
        *self.inner.partition()
    }

    fn field(&self, values: Vec<f64>) -> PyResult<ScalarField> {
        ScalarField::new(self.part(), values).map_err(py_err)
    }

    fn set(&self, cells: Vec<usize>) -> PyResult<CellSet> {
        CellSet::new(self.part(), cells).map_err(py_err)
    }
}

#[pymethods]
impl PyOperator {
    /// Builds the operator of a named analytic field such as `"rotation"` or
    /// `"linear(a,b,c,d)"` on `domain = (xmin, ymin, xmax, ymax)`.
    #[staticmethod]
    #[pyo3(signature = (field, domain, partition, dt, samples=100, seed=0, boundary="clamp", grid=(65, 65)))]
    #[allow(clippy::too_many_arguments)]
    fn analytic(
        field: &str,
        domain: [f64; 4],
        partition: (usize, usize),
        dt: f64,
        samples: usize,
        seed: u64,
        boundary: &str,
        grid: (usize, usize),
    ) -> PyResult<Self> {
        let f: AnalyticField = field.parse().map_err(py_err)?;
        let d = Domain::from_rect(domain).map_err(py_err)?;
        let vf = f.sample(d, grid.0, grid.1, parse_boundary(boundary)?).map_err(py_err)?;
        let part = BoxPartition::new(d, partition.0, partition.1).map_err(py_err)?;
        let settings = UlamSettings::new(dt).map_err(py_err)?.samples(samples).seed(seed);
        let inner = TransferOperator::build(&vf, part, &settings).map_err(py_err)?;
        Ok(PyOperator { inner })
    }

    /// Builds the operator of a velocity field read from a snapshot CSV.
    #[staticmethod]
    #[pyo3(signature = (path, partition, dt, samples=100, seed=0, boundary="clamp"))]
    fn from_snapshot(
        path: &str,
        partition: (usize, usize),
        dt: f64,
        samples: usize,
        seed: u64,
        boundary: &str,
    ) -> PyResult<Self> {
        let vf = gramflow::field::read_snapshot(path).map_err(py_err)?.with_boundary(parse_boundary(boundary)?);
        let part = BoxPartition::new(*vf.domain(), partition.0, partition.1).map_err(py_err)?;
        let settings = UlamSettings::new(dt).map_err(py_err)?.samples(samples).seed(seed);
        let inner = TransferOperator::build(&vf, part, &settings).map_err(py_err)?;
        Ok(PyOperator { inner })
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.part().dims()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.part().len()
    }

    #[getter]
    fn cell_measure(&self) -> f64 {
        self.part().cell_measure()
    }

    /// Fraction of each cell's samples that left the domain.
    fn leak(&self) -> Vec<f64> {
        self.inner.leak().to_vec()
    }

    /// Cells whose centres lie in `rect = (xmin, ymin, xmax, ymax)`.
    fn cells_in(&self, rect: [f64; 4]) -> PyResult<Vec<usize>> {
        let r = Domain::from_rect(rect).map_err(py_err)?;
        Ok(CellSet::from_rect(self.part(), &r).map_err(py_err)?.indices().to_vec())
    }

    /// One Perron-Frobenius step of a density.
    fn pf(&self, rho: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(apply_pf(&self.inner, &self.field(rho)?).map_err(py_err)?.into_values())
    }

    /// One Koopman step of an observable.
    fn koopman(&self, g: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(apply_koopman(&self.inner, &self.field(g)?).map_err(py_err)?.into_values())
    }

    /// Gramian of `cells`; `steps=None` asks for the infinite horizon.
    #[pyo3(signature = (cells, steps=None, kind="controllability", trapezoid=false))]
    fn gramian(&self, cells: Vec<usize>, steps: Option<usize>, kind: &str, trapezoid: bool) -> PyResult<Vec<f64>> {
        let set = self.set(cells)?;
        let kind = parse_kind(kind)?;
        let g = match steps {
            Some(k) => {
                let q = if trapezoid { Quadrature::Trapezoid } else { Quadrature::LeftEndpoint };
                finite_gramian(&self.inner, kind, &set, k, q)
            }
            None => match kind {
                GramianKind::Controllability => {
                    infinite_controllability_gramian(&self.inner, &set, &InfiniteOptions::default())
                }
                GramianKind::Observability => {
                    infinite_observability_gramian(&self.inner, &set, &InfiniteOptions::default())
                }
            },
        }
        .map_err(py_err)?;
        Ok(g.field.into_values())
    }

    /// Expected time spent in `target` by mass released uniformly on `source`.
    fn residence_time(&self, source: Vec<usize>, target: Vec<usize>) -> PyResult<f64> {
        let g = infinite_controllability_gramian(&self.inner, &self.set(source)?, &InfiniteOptions::default())
            .map_err(py_err)?;
        residence_time(&g, &self.set(target)?).map_err(py_err)
    }

    /// Scores and ranks candidate sets. Returns dicts with `rank`, `cells`,
    /// `support` and `norm`, best first.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (candidates, steps, sensor=false, eps=1e-9, tie_tol=DEFAULT_TIE_TOL, prefer_small_norm=false))]
    fn rank<'py>(
        &self,
        py: Python<'py>,
        candidates: Vec<Vec<usize>>,
        steps: usize,
        sensor: bool,
        eps: f64,
        tie_tol: f64,
        prefer_small_norm: bool,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let sets = candidates.into_iter().map(|c| self.set(c)).collect::<PyResult<Vec<_>>>()?;
        let mode = if sensor { PlacementMode::Sensor } else { PlacementMode::Actuator };
        let dir = if prefer_small_norm { NormDirection::Min } else { NormDirection::Max };
        let scores = score_candidates(&self.inner, &sets, steps, mode, eps).map_err(py_err)?;
        let ranked = rank_placements(&scores, tie_tol, dir).map_err(py_err)?;
        ranked
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("rank", s.rank)?;
                d.set_item("cells", s.candidate.indices().to_vec())?;
                d.set_item("support", s.support)?;
                d.set_item("norm", s.norm)?;
                Ok(d)
            })
            .collect()
    }

    /// Minimum-energy steering of `rho0` to `target` with controls on `cells`.
    #[pyo3(signature = (rho0, target, cells, steps, method="multiplication"))]
    fn steer<'py>(
        &self,
        py: Python<'py>,
        rho0: Vec<f64>,
        target: Vec<f64>,
        cells: Vec<usize>,
        steps: usize,
        method: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = ControlOptions::method(parse_method(method)?);
        let r =
            min_energy_control(&self.inner, &self.field(rho0)?, &self.field(target)?, &self.set(cells)?, steps, &opts)
                .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("energy", r.energy)?;
        d.set_item("target_error", r.target_error)?;
        d.set_item("terminal", r.terminal.values().to_vec())?;
        let controls: Vec<Vec<f64>> = r.schedule.fields().iter().map(|u| u.values().to_vec()).collect();
        d.set_item("controls", controls)?;
        Ok(d)
    }

    /// Occupation-time stability certificate around `neighborhood`.
    fn stability<'py>(&self, py: Python<'py>, v0: Vec<f64>, neighborhood: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
        let rep =
            stability_certificate(&self.inner, &self.field(v0)?, &self.set(neighborhood)?, &InfiniteOptions::default())
                .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("certified", rep.classification == Stability::CertifiedStable)?;
        d.set_item("residual", rep.residual)?;
        d.set_item("min_value", rep.min_value)?;
        d.set_item("reason", rep.reason)?;
        d.set_item("solution", rep.solution.into_values())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let (px, py) = self.part().dims();
        format!("TransferOperator({px}x{py}, dt={}, nnz={})", self.inner.dt(), self.inner.matrix().nnz())
    }
}

#[pymodule]
fn pygramflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add("Infeasible", m.py().get_type::<Infeasible>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        assert_eq!(parse_boundary("absorb").unwrap(), BoundaryPolicy::Absorb);
        assert_eq!(parse_kind("observability").unwrap(), GramianKind::Observability);
        assert_eq!(parse_method("exact").unwrap(), ControlMethod::Exact);
    }
}
