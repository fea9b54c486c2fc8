//! Python bindings: sparse matrices, classic and learned preconditioners,
//! PCG solves, dataset generation and training.

use std::path::PathBuf;
use std::sync::Arc;

use gnnpcg::bench::{preconditioned_condition_number, Method};
use gnnpcg::fem::{generate_dataset as gen_dataset, load_dataset, save_dataset, DatasetConfig};
use gnnpcg::gnn::{GnnHyper, GnnModel};
use gnnpcg::mesh::{generate_disk, generate_unit_square, TriangleMesh};
use gnnpcg::pcg::{pcg_solve, SolveOptions};
use gnnpcg::precond::PreconditionerKind;
use gnnpcg::sparse::{condition_number_dense, mtx, CsrMatrix};
use gnnpcg::train::{train as train_model, Sample, TrainConfig};
use gnnpcg::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, Error::Config(_) | Error::TooLarge { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyIOError::new_err(e.to_string())
    }
}

/// Symmetric sparse matrix in CSR form.
#[pyclass(name = "SparseMatrix", frozen)]
struct PySparseMatrix {
    inner: CsrMatrix,
}

#[pymethods]
impl PySparseMatrix {
    /// Builds an `n × n` matrix from coordinate lists; duplicates are summed.
    #[staticmethod]
    fn from_triplets(n: usize, rows: Vec<usize>, cols: Vec<usize>, values: Vec<f64>) -> PyResult<Self> {
        if rows.len() != cols.len() || rows.len() != values.len() {
            return Err(PyValueError::new_err("rows, cols and values must have equal length"));
        }
        let t: Vec<_> = rows.into_iter().zip(cols).zip(values).map(|((i, j), v)| (i, j, v)).collect();
        Ok(Self { inner: CsrMatrix::from_triplets(n, &t).map_err(err)? })
    }

    /// Reads a Matrix Market coordinate file.
    #[staticmethod]
    fn read_mtx(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: mtx::read_matrix_file(&path).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn spmv(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.spmv(&x).map_err(err)
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }

    /// Dense copy as a list of rows.
    fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.inner.to_dense();
        (0..d.rows()).map(|i| d.row(i).to_vec()).collect()
    }

    /// Spectral condition number from a dense eigendecomposition.
    fn condition_number(&self) -> PyResult<f64> {
        condition_number_dense(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("SparseMatrix(n={}, nnz={})", self.inner.n(), self.inner.nnz())
    }
}

/// Graph network that predicts a preconditioner factor.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Arc<GnnModel>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset = "heat", seed = 0, x0_head = false))]
    fn new(preset: &str, seed: u64, x0_head: bool) -> PyResult<Self> {
        let h = match preset {
            "heat" | "wave" => GnnHyper::heat(),
            "poisson" => GnnHyper::poisson(),
            other => return Err(PyValueError::new_err(format!("unknown preset {other}"))),
        };
        let h = if x0_head { h.with_x0_head() } else { h };
        Ok(Self { inner: Arc::new(GnnModel::new(h, seed).map_err(err)?) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(GnnModel::load(&path).map_err(err)?) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.inner.n_parameters()
    }

    #[getter]
    fn has_x0_head(&self) -> bool {
        self.inner.has_x0_head()
    }

    fn __repr__(&self) -> String {
        let h = self.inner.hyper();
        format!("Model(parameters={}, n_mp={}, h={}, x0_head={})", self.inner.n_parameters(), h.n_mp, h.h, h.x0_head)
    }
}

fn method(name: &str, model: Option<&PyModel>) -> PyResult<Method> {
    let learned = |x0: bool| match model {
        Some(m) => Ok(Method::Learned { model: m.inner.clone(), x0 }),
        None => Err(PyValueError::new_err("learned methods need a model")),
    };
    match name {
        "learned" => learned(false),
        "learned+x0" => learned(true),
        other => match other.parse::<PreconditionerKind>().map_err(err)? {
            PreconditionerKind::Learned => learned(false),
            k => Ok(Method::Classic(k)),
        },
    }
}

/// Solves `A x = b` with PCG. Returns the solution and a report dict with
/// `iterations`, `converged`, `true_residual`, `history` and per-threshold
/// `hits` (`None` where a threshold was not reached).
#[pyfunction]
#[pyo3(signature = (a, b, method = "ic0", model = None, thresholds = vec![1e-8], max_iter = None))]
fn solve<'py>(
    py: Python<'py>,
    a: &PySparseMatrix,
    b: Vec<f64>,
    method: &str,
    model: Option<&PyModel>,
    thresholds: Vec<f64>,
    max_iter: Option<usize>,
) -> PyResult<(Vec<f64>, Bound<'py, PyDict>)> {
    let m = self::method(method, model)?;
    let (p, start) = m.prepare(&a.inner, &b).map_err(err)?;
    let opts = SolveOptions { thresholds, x0: start, max_iter, ..SolveOptions::default() };
    let (x, report) = py.detach(|| pcg_solve(&a.inner, &b, &p, &opts)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("iterations", report.iterations)?;
    d.set_item("converged", report.converged)?;
    d.set_item("true_residual", report.true_residual)?;
    d.set_item("history", report.history)?;
    let hits: Vec<(f64, Option<usize>)> = report.hits.iter().map(|h| (h.threshold, h.iterations)).collect();
    d.set_item("hits", hits)?;
    Ok((x, d))
}

/// Condition number of the preconditioned operator `P^{-1} A`.
#[pyfunction]
#[pyo3(signature = (a, b, method = "ic0", model = None))]
fn preconditioned_condition(a: &PySparseMatrix, b: Vec<f64>, method: &str, model: Option<&PyModel>) -> PyResult<f64> {
    let (p, _) = self::method(method, model)?.prepare(&a.inner, &b).map_err(err)?;
    preconditioned_condition_number(&p, &a.inner).map_err(err)
}

fn mesh_lists(mesh: TriangleMesh) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    (mesh.vertices().to_vec(), mesh.triangles().to_vec())
}

/// Unit square with `k` cells per side; returns `(vertices, triangles)`.
#[pyfunction]
fn unit_square_mesh(k: usize) -> PyResult<(Vec<[f64; 2]>, Vec<[usize; 3]>)> {
    Ok(mesh_lists(generate_unit_square(k).map_err(err)?))
}

/// Disk meshed with concentric rings of the given vertex counts.
#[pyfunction]
fn disk_mesh(rings: Vec<usize>) -> PyResult<(Vec<[f64; 2]>, Vec<[usize; 3]>)> {
    Ok(mesh_lists(generate_disk(&rings).map_err(err)?))
}

/// Simulates a dataset from a JSON dataset config and writes it to `out`.
/// Returns `(train systems, test systems)`.
#[pyfunction]
fn generate_dataset(py: Python<'_>, config_json: &str, out: PathBuf) -> PyResult<(usize, usize)> {
    let cfg: DatasetConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("dataset config: {e}")))?;
    py.detach(|| {
        let ds = gen_dataset(&cfg)?;
        save_dataset(&ds, &out)?;
        Ok((ds.train_tuples().len(), ds.test_tuples().len()))
    })
    .map_err(err)
}

/// Loads the systems of a saved dataset split (`train`, `test` or `all`) as
/// `(A, b, x)` triples.
#[pyfunction]
#[pyo3(signature = (path, split = "test"))]
fn load_systems(path: PathBuf, split: &str) -> PyResult<Vec<(PySparseMatrix, Vec<f64>, Vec<f64>)>> {
    let ds = load_dataset(&path).map_err(err)?;
    let tuples = match split {
        "train" => ds.train_tuples(),
        "test" => ds.test_tuples(),
        "all" => ds.train_tuples().into_iter().chain(ds.test_tuples()).collect(),
        other => return Err(PyValueError::new_err(format!("unknown split {other}"))),
    };
    Ok(tuples.into_iter().map(|t| (PySparseMatrix { inner: t.a.clone() }, t.b.clone(), t.x.clone())).collect())
}

/// Trains `model` on the training split of a saved dataset. `config_json`
/// holds training options; omitted fields take their defaults. Returns the
/// trained model and the per-step batch losses.
#[pyfunction]
#[pyo3(signature = (model, data, config_json = "{}"))]
fn train(py: Python<'_>, model: &PyModel, data: PathBuf, config_json: &str) -> PyResult<(PyModel, Vec<f64>)> {
    let cfg: TrainConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("train config: {e}")))?;
    let base = model.inner.clone();
    let outcome = py
        .detach(|| {
            let ds = load_dataset(&data)?;
            let samples: Vec<Sample> = ds.train_tuples().into_iter().map(Sample::from_tuple).collect::<Result<_, _>>()?;
            train_model(&base, &samples, &cfg)
        })
        .map_err(err)?;
    let losses = outcome.curve.iter().map(|p| p.batch_loss).collect();
    Ok((PyModel { inner: Arc::new(outcome.model) }, losses))
}

#[pymodule]
fn pygnnpcg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySparseMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(preconditioned_condition, m)?)?;
    m.add_function(wrap_pyfunction!(unit_square_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(disk_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_systems, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
