//! Python bindings. Arrays cross the boundary as nested lists.

use choicekit::estimation::TraceRow;
use choicekit::formula::parse_formula as parse;
use choicekit::ingest::{columns_by_variation, from_long_format, ColumnRoles, LabelMode, Table};
use choicekit::nested::{joint, nest_dataset, Level};
use choicekit::synth::{SimModel, SimSpec};
use choicekit::{
    Availability, CategoryPartition, ChoiceDataset, CoefRow, Estimable, FitOptions, JointDataset, NestStructure,
    Norm, ObsVariation, Observable, Optimizer, Precision, Regularization,
};
use indexmap::IndexMap;
use ndarray::{Array2, Array3, ArrayD};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: choicekit::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.name()))
}

#[derive(FromPyObject)]
enum ObsInput {
    Matrix(Vec<Vec<f64>>),
    Tensor(Vec<Vec<Vec<f64>>>),
}

fn ragged() -> PyErr {
    PyValueError::new_err("observable rows have unequal lengths")
}

fn to_observable(name: &str, v: ObsInput) -> PyResult<Observable> {
    match v {
        ObsInput::Matrix(rows) => {
            let k = rows.first().map_or(0, Vec::len);
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let a = Array2::from_shape_vec((rows.len(), k), flat).map_err(|_| ragged())?;
            Observable::from_matrix(name, a).map_err(err)
        }
        ObsInput::Tensor(t) => {
            let i = t.first().map_or(0, Vec::len);
            let k = t.first().and_then(|r| r.first()).map_or(0, Vec::len);
            let flat: Vec<f64> = t.iter().flatten().flatten().copied().collect();
            let a = Array3::from_shape_vec((t.len(), i, k), flat).map_err(|_| ragged())?;
            Observable::from_tensor(name, a).map_err(err)
        }
    }
}

fn nested_list(py: Python<'_>, a: &ArrayD<f64>) -> PyResult<Py<PyAny>> {
    let shape = a.shape().to_vec();
    let flat: Vec<f64> = a.iter().copied().collect();
    fn build(py: Python<'_>, shape: &[usize], flat: &[f64]) -> PyResult<Py<PyAny>> {
        match shape {
            [] => Ok(flat[0].into_pyobject(py)?.into_any().unbind()),
            [_] => Ok(flat.to_vec().into_pyobject(py)?.into_any().unbind()),
            [n, rest @ ..] => {
                let step = rest.iter().product::<usize>();
                let items = (0..*n)
                    .map(|i| build(py, rest, &flat[i * step..(i + 1) * step]))
                    .collect::<PyResult<Vec<_>>>()?;
                Ok(items.into_pyobject(py)?.into_any().unbind())
            }
        }
    }
    build(py, &shape, &flat)
}

fn matrix(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Choice records with their observables.
#[pyclass(name = "Dataset", module = "choicekit_py")]
struct PyDataset {
    inner: ChoiceDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (item_index, user_index=None, session_index=None, num_items=None, num_users=None,
                        num_sessions=None, availability=None, observables=None, categories=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        item_index: Vec<usize>,
        user_index: Option<Vec<usize>>,
        session_index: Option<Vec<usize>>,
        num_items: Option<usize>,
        num_users: Option<usize>,
        num_sessions: Option<usize>,
        availability: Option<Vec<Vec<bool>>>,
        observables: Option<IndexMap<String, ObsInput>>,
        categories: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let mut b = ChoiceDataset::builder(item_index);
        if let Some(u) = user_index {
            b = b.user_index(u);
        }
        if let Some(s) = session_index {
            b = b.session_index(s);
        }
        if let Some(n) = num_items {
            b = b.num_items(n);
        }
        if let Some(n) = num_users {
            b = b.num_users(n);
        }
        if let Some(n) = num_sessions {
            b = b.num_sessions(n);
        }
        if let Some(a) = availability {
            b = b.availability(Availability::from_rows(&a).map_err(err)?);
        }
        if let Some(c) = categories {
            b = b.categories(CategoryPartition::new(c).map_err(err)?);
        }
        for (name, v) in observables.unwrap_or_default() {
            b = b.observable(to_observable(&name, v)?);
        }
        Ok(Self {
            inner: b.build().map_err(err)?,
        })
    }

    /// Long-format CSV: one row per (record, item). `columns` maps a
    /// variation name to the feature columns taken from the main table.
    #[staticmethod]
    #[pyo3(signature = (path, record, item, choice, user=None, session=None, columns=None, encoding="first-appearance"))]
    #[allow(clippy::too_many_arguments)]
    fn from_long_csv(
        path: &str,
        record: &str,
        item: &str,
        choice: &str,
        user: Option<String>,
        session: Option<String>,
        columns: Option<IndexMap<String, Vec<String>>>,
        encoding: &str,
    ) -> PyResult<Self> {
        let table = Table::read_csv(path).map_err(err)?;
        let roles = ColumnRoles {
            record: record.into(),
            item: item.into(),
            choice: choice.into(),
            user,
            session,
        };
        let spec = columns
            .unwrap_or_default()
            .into_iter()
            .map(|(v, cols)| {
                ObsVariation::parse(&v)
                    .map(|v| (v, cols))
                    .ok_or_else(|| PyValueError::new_err(format!("unknown variation `{v}`")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let mode = LabelMode::parse(encoding).map_err(err)?;
        let (inner, _) =
            from_long_format(&table, &roles, &columns_by_variation(&spec), &[], mode, Precision::F64).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(records={}, users={}, items={}, sessions={})",
            self.inner.len(),
            self.inner.num_users(),
            self.inner.num_items(),
            self.inner.num_sessions()
        )
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn num_sessions(&self) -> usize {
        self.inner.num_sessions()
    }

    #[getter]
    fn item_index(&self) -> Vec<usize> {
        self.inner.item_index().to_vec()
    }

    fn observable_names(&self) -> Vec<String> {
        self.inner.observables().map(|o| o.name().to_string()).collect()
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    /// Messages for every violated dataset invariant.
    fn violations(&self) -> Vec<String> {
        self.inner.violations().iter().map(ToString::to_string).collect()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.subset(&indices).map_err(err)?,
        })
    }
}

/// `(observable, variation)` pairs of a formula.
#[pyfunction]
fn parse_formula(text: &str) -> PyResult<Vec<(String, String)>> {
    Ok(parse(text)
        .map_err(err)?
        .into_iter()
        .map(|t| (t.observable.name().to_string(), t.variation.as_str().to_string()))
        .collect())
}

struct FitArgs {
    optimizer: String,
    lr: f64,
    epochs: usize,
    batch_size: i64,
    seed: u64,
    se: bool,
}

fn fit_options(a: &FitArgs) -> PyResult<FitOptions> {
    Ok(FitOptions {
        optimizer: Optimizer::parse(&a.optimizer).map_err(err)?,
        learning_rate: a.lr,
        num_epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        compute_se: a.se,
        ..FitOptions::default()
    })
}

fn regularization(kind: Option<&str>, weight: f64) -> PyResult<Option<Regularization>> {
    kind.map(|k| Norm::parse(k).and_then(|n| Regularization::new(n, weight)).map_err(err))
        .transpose()
}

fn coef_dicts<'py>(py: Python<'py>, rows: &[CoefRow]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("coefficient", &r.coefficient)?;
            d.set_item("level", r.level.map(Level::as_str))?;
            d.set_item("entity_kind", r.entity_kind)?;
            d.set_item("entity", r.entity_index)?;
            d.set_item("dim", r.dim)?;
            d.set_item("value", r.value)?;
            d.set_item("std_err", r.se)?;
            Ok(d)
        })
        .collect()
}

fn run_fit<'py, M: Estimable>(
    py: Python<'py>,
    model: &mut M,
    data: &M::Data,
    args: &FitArgs,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = fit_options(args)?;
    let r = py.detach(|| choicekit::fit(model, data, &opts)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("theta", &r.theta)?;
    d.set_item("nll", r.nll)?;
    d.set_item("epochs", r.epochs)?;
    d.set_item("converged", r.converged)?;
    d.set_item("stop_reason", r.stop_reason.as_str())?;
    d.set_item("wall_seconds", r.wall_seconds)?;
    d.set_item("trace", r.trace.iter().map(|t: &TraceRow| t.nll).collect::<Vec<_>>())?;
    d.set_item("se", r.se.clone())?;
    d.set_item("coefficients", coef_dicts(py, &model.coefficient_rows(r.se.as_deref()))?)?;
    d.set_item("warnings", r.warnings)?;
    Ok(d)
}

/// Conditional logit model.
#[pyclass(name = "ConditionalLogit", module = "choicekit_py")]
struct PyConditionalLogit {
    inner: choicekit::ConditionalLogit,
}

#[pymethods]
impl PyConditionalLogit {
    #[new]
    #[pyo3(signature = (formula, dataset, num_items=None, num_users=None, regularization=None, reg_weight=0.0))]
    fn new(
        formula: &str,
        dataset: &PyDataset,
        num_items: Option<usize>,
        num_users: Option<usize>,
        regularization: Option<&str>,
        reg_weight: f64,
    ) -> PyResult<Self> {
        let ds = &dataset.inner;
        let users = num_users.or(ds.has_user_index().then(|| ds.num_users()));
        let mut inner = choicekit::ConditionalLogit::from_formula(formula, ds, num_items.unwrap_or(ds.num_items()), users)
            .map_err(err)?
            .with_regularization(self::regularization(regularization, reg_weight)?);
        if let Some(c) = ds.categories() {
            inner = inner.with_categories(c.clone()).map_err(err)?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[setter]
    fn set_theta(&mut self, theta: Vec<f64>) -> PyResult<()> {
        self.inner.set_theta(&theta).map_err(err)
    }

    fn log_prob(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix(&self.inner.log_prob(&dataset.inner).map_err(err)?.0))
    }

    fn utilities(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix(&self.inner.utilities(&dataset.inner).map_err(err)?))
    }

    fn neg_log_likelihood(&self, dataset: &PyDataset) -> PyResult<f64> {
        self.inner.neg_log_likelihood(&dataset.inner).map_err(err)
    }

    fn gradient(&self, dataset: &PyDataset) -> PyResult<Vec<f64>> {
        self.inner.gradient(&dataset.inner).map_err(err)
    }

    fn get_coefficient(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        let a = self.inner.get_coefficient(name).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        nested_list(py, &a)
    }

    #[pyo3(signature = (dataset, optimizer="lbfgs".to_string(), lr=0.1, epochs=500, batch_size=-1, seed=0, se=false))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        optimizer: String,
        lr: f64,
        epochs: usize,
        batch_size: i64,
        seed: u64,
        se: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let args = FitArgs {
            optimizer,
            lr,
            epochs,
            batch_size,
            seed,
            se,
        };
        run_fit(py, &mut self.inner, &dataset.inner, &args)
    }

    fn __repr__(&self) -> String {
        format!("ConditionalLogit({}, params={})", self.inner.spec(), self.inner.num_params())
    }
}

/// Two-level nested logit model.
#[pyclass(name = "NestedLogit", module = "choicekit_py")]
struct PyNestedLogit {
    inner: choicekit::NestedLogit,
    data: JointDataset,
}

#[pymethods]
impl PyNestedLogit {
    /// `nests` lists the item codes of each nest. `nest_observables` are
    /// indexed by nest (item variation), user or session.
    #[new]
    #[pyo3(signature = (nest_formula, item_formula, dataset, nests, shared_lambda=false, nest_observables=None,
                        num_users=None, regularization=None, reg_weight=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        nest_formula: &str,
        item_formula: &str,
        dataset: &PyDataset,
        nests: Vec<Vec<usize>>,
        shared_lambda: bool,
        nest_observables: Option<IndexMap<String, ObsInput>>,
        num_users: Option<usize>,
        regularization: Option<&str>,
        reg_weight: f64,
    ) -> PyResult<Self> {
        let ds = &dataset.inner;
        let structure = NestStructure::new(nests, shared_lambda).map_err(err)?;
        let obs = nest_observables
            .unwrap_or_default()
            .into_iter()
            .map(|(n, v)| to_observable(&n, v))
            .collect::<PyResult<Vec<_>>>()?;
        let nest = if nest_formula.trim().is_empty() && obs.is_empty() {
            None
        } else {
            Some(nest_dataset(ds, &structure, obs).map_err(err)?)
        };
        let data = joint(ds.clone(), nest).map_err(err)?;
        let users = num_users.or(ds.has_user_index().then(|| ds.num_users()));
        let inner = choicekit::NestedLogit::from_formulas(nest_formula, item_formula, &data, structure, users)
            .map_err(err)?
            .with_regularization(self::regularization(regularization, reg_weight)?);
        Ok(Self { inner, data })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[setter]
    fn set_theta(&mut self, theta: Vec<f64>) -> PyResult<()> {
        self.inner.set_theta(&theta).map_err(err)
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambda()
    }

    #[setter]
    fn set_lambdas(&mut self, lambda: Vec<f64>) -> PyResult<()> {
        self.inner.set_lambda(&lambda).map_err(err)
    }

    fn log_prob(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix(&self.inner.log_prob(&self.data).map_err(err)?.0))
    }

    fn neg_log_likelihood(&self) -> PyResult<f64> {
        self.inner.neg_log_likelihood(&self.data).map_err(err)
    }

    fn gradient(&self) -> PyResult<Vec<f64>> {
        self.inner.gradient(&self.data).map_err(err)
    }

    /// `level` is `"nest"` or `"item"`; needed only when the name is ambiguous.
    #[pyo3(signature = (name, level=None))]
    fn get_coefficient(&self, py: Python<'_>, name: &str, level: Option<&str>) -> PyResult<Py<PyAny>> {
        let level = level
            .map(|l| Level::parse(l).ok_or_else(|| PyValueError::new_err(format!("unknown level `{l}`"))))
            .transpose()?;
        let a = self.inner.get_coefficient(name, level).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        nested_list(py, &a)
    }

    #[pyo3(signature = (optimizer="lbfgs".to_string(), lr=0.1, epochs=500, batch_size=-1, seed=0, se=false))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        optimizer: String,
        lr: f64,
        epochs: usize,
        batch_size: i64,
        seed: u64,
        se: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let args = FitArgs {
            optimizer,
            lr,
            epochs,
            batch_size,
            seed,
            se,
        };
        run_fit(py, &mut self.inner, &self.data, &args)
    }
}

/// Simulated dataset plus `(truth theta, formula)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (model="m1", users=100, items=30, records=10000, user_dim=30, item_dim=30, seed=0))]
fn simulate(
    py: Python<'_>,
    model: &str,
    users: usize,
    items: usize,
    records: usize,
    user_dim: usize,
    item_dim: usize,
    seed: u64,
) -> PyResult<(PyDataset, Vec<f64>, String)> {
    let spec = SimSpec {
        num_users: users,
        num_items: items,
        num_records: records,
        user_dim,
        item_dim,
        model: SimModel::parse(model).map_err(err)?,
        seed,
        ..SimSpec::default()
    };
    let sim = py.detach(|| choicekit::synth::simulate(&spec)).map_err(err)?;
    Ok((PyDataset { inner: sim.data }, sim.truth.values().to_vec(), sim.formula.to_string()))
}

#[pymodule]
fn choicekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConditionalLogit>()?;
    m.add_class::<PyNestedLogit>()?;
    m.add_function(wrap_pyfunction!(parse_formula, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
