//! Python bindings: taxonomy algebra, metrics, synthetic worlds, training
//! and affordance recognition.

use atl_core::affordance::{self, AffordanceBank};
use atl_core::config::RunConfig;
use atl_core::eval;
use atl_core::experiment::{self, Prepared};
use atl_core::geometry::{self, BBox};
use atl_core::pipeline::{self, HoiModel};
use atl_core::taxonomy::MultiHot;
use atl_core::{verify, AtlError};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde::Serialize;
use serde_json::Value;

create_exception!(atl, AtlConfigError, PyValueError);
create_exception!(atl, AtlDataError, PyValueError);
create_exception!(atl, AtlDivergenceError, PyException);

fn py_err(e: AtlError) -> PyErr {
    match e {
        AtlError::Config(_) => AtlConfigError::new_err(e.to_string()),
        AtlError::Divergence { .. } => AtlDivergenceError::new_err(e.to_string()),
        _ => AtlDataError::new_err(e.to_string()),
    }
}

fn value_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    match v {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_py_any(py),
            (_, Some(u)) => u.into_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_py_any(py),
        },
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| AtlDataError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

fn multi_hot(bits: Vec<bool>) -> MultiHot {
    MultiHot(bits)
}

fn bbox(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

fn parse_config(config: Option<&str>) -> PyResult<RunConfig> {
    let cfg: RunConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| AtlConfigError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[pyclass(name = "Taxonomy", module = "atl", skip_from_py_object)]
#[derive(Clone)]
struct PyTaxonomy {
    inner: atl_core::Taxonomy,
}

#[pymethods]
impl PyTaxonomy {
    #[new]
    fn new(verbs: Vec<String>, objects: Vec<String>, pairs: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = atl_core::Taxonomy::new(verbs, objects, pairs).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_pairs(n_verbs: usize, n_objects: usize, pairs: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = atl_core::Taxonomy::from_pairs(n_verbs, n_objects, pairs).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = atl_core::Taxonomy::load(path.as_ref()).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).map_err(py_err)
    }

    #[getter]
    fn n_verbs(&self) -> usize {
        self.inner.n_verbs()
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.n_objects()
    }

    #[getter]
    fn n_hoi(&self) -> usize {
        self.inner.n_hoi()
    }

    #[getter]
    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs().to_vec()
    }

    #[getter]
    fn verb_names(&self) -> Vec<String> {
        self.inner.verb_names().to_vec()
    }

    #[getter]
    fn object_names(&self) -> Vec<String> {
        self.inner.object_names().to_vec()
    }

    fn category(&self, verb: usize, object: usize) -> Option<usize> {
        self.inner.category(verb, object)
    }

    /// Multi-hot HOI label of an object label composed with a verb label.
    fn compose_label(&self, object_label: Vec<bool>, verb_label: Vec<bool>) -> PyResult<Vec<bool>> {
        let y = self
            .inner
            .compose_label(&multi_hot(object_label), &multi_hot(verb_label))
            .map_err(py_err)?;
        Ok(y.0)
    }

    fn decouple_verb(&self, label: Vec<bool>) -> PyResult<Vec<bool>> {
        Ok(self
            .inner
            .decouple_verb(&multi_hot(label))
            .map_err(py_err)?
            .0)
    }

    fn decouple_object(&self, label: Vec<bool>) -> PyResult<Vec<bool>> {
        Ok(self
            .inner
            .decouple_object(&multi_hot(label))
            .map_err(py_err)?
            .0)
    }

    fn affordances_of(&self, object: usize) -> Vec<usize> {
        self.inner.affordances_of(object)
    }

    fn __repr__(&self) -> String {
        format!(
            "Taxonomy(n_verbs={}, n_objects={}, n_hoi={})",
            self.inner.n_verbs(),
            self.inner.n_objects(),
            self.inner.n_hoi()
        )
    }
}

#[pyclass(name = "Bank", module = "atl")]
struct PyBank {
    inner: AffordanceBank,
}

#[pymethods]
impl PyBank {
    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.counts().to_vec()
    }
}

#[pyclass(name = "Model", module = "atl")]
struct PyModel {
    inner: HoiModel,
}

#[pymethods]
impl PyModel {
    /// Sigmoid scores of the interaction classifier for every HOI category.
    fn hoi_scores(&self, verb_feat: Vec<f64>, object_feat: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner
            .interaction_scores(&verb_feat, &object_feat)
            .map_err(py_err)
    }

    #[pyo3(signature = (object_feat, bank, taxonomy, hoi_threshold = affordance::DEFAULT_HOI_THRESHOLD, keep_threshold = affordance::DEFAULT_KEEP_THRESHOLD))]
    fn recognize(
        &self,
        py: Python<'_>,
        object_feat: Vec<f64>,
        bank: &PyBank,
        taxonomy: &PyTaxonomy,
        hoi_threshold: f64,
        keep_threshold: f64,
    ) -> PyResult<Py<PyAny>> {
        let s = affordance::recognize(
            &object_feat,
            &bank.inner,
            &self.inner,
            &taxonomy.inner,
            hoi_threshold,
            keep_threshold,
        )
        .map_err(py_err)?;
        to_py(py, &s)
    }
}

/// A generated world: taxonomy, split and datasets.
#[pyclass(name = "World", module = "atl")]
struct PyWorld {
    cfg: RunConfig,
    seed: u64,
    prepared: Prepared,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let prepared = experiment::prepare(&cfg, seed).map_err(py_err)?;
        Ok(Self {
            cfg,
            seed,
            prepared,
        })
    }

    #[getter]
    fn taxonomy(&self) -> PyTaxonomy {
        PyTaxonomy {
            inner: self.prepared.tax.clone(),
        }
    }

    #[getter]
    fn sizes(&self) -> (usize, usize, usize) {
        let d = &self.prepared.data;
        (d.train.len(), d.test.len(), d.external.len())
    }

    #[getter]
    fn unseen_objects(&self) -> Vec<usize> {
        self.prepared
            .split
            .unseen_object_ids
            .iter()
            .copied()
            .collect()
    }

    #[getter]
    fn unseen_categories(&self) -> Vec<usize> {
        self.prepared.split.unseen_hoi_ids.iter().copied().collect()
    }

    /// Trains the transfer model, or the no-transfer baseline.
    #[pyo3(signature = (baseline = false))]
    fn train(&self, py: Python<'_>, baseline: bool) -> PyResult<(PyModel, Py<PyAny>)> {
        let cfg = if baseline {
            self.cfg.train.baseline()
        } else {
            self.cfg.train.clone()
        };
        let outcome = py
            .detach(|| experiment::train_model(&self.prepared, &cfg, self.seed))
            .map_err(py_err)?;
        let trace = to_py(py, &outcome.trace)?;
        Ok((
            PyModel {
                inner: outcome.model,
            },
            trace,
        ))
    }

    /// HOI detection mAP report on the test set under the world's split.
    fn evaluate(&self, py: Python<'_>, model: &PyModel) -> PyResult<Py<PyAny>> {
        let r =
            experiment::evaluate_hoi(&model.inner, &self.prepared, &self.cfg).map_err(py_err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (m = affordance::DEFAULT_BANK_SIZE))]
    fn build_bank(&self, m: usize) -> PyResult<PyBank> {
        let inner = experiment::build_run_bank(&self.prepared, m, self.seed).map_err(py_err)?;
        Ok(PyBank { inner })
    }

    /// Fresh external-domain features of `object`.
    #[pyo3(signature = (object, n = 1))]
    fn object_queries(&self, object: usize, n: usize) -> PyResult<Vec<Vec<f64>>> {
        let q = experiment::affordance_queries(&self.prepared, &[object], n, self.seed)
            .map_err(py_err)?;
        Ok(q.into_iter().map(|q| q.object_feat).collect())
    }

    /// Precision/recall/F1 and affordance mAP on the held-out objects.
    fn evaluate_affordance(
        &self,
        py: Python<'_>,
        model: &PyModel,
        bank: &PyBank,
    ) -> PyResult<Py<PyAny>> {
        let aff = &self.cfg.affordance;
        let objects = experiment::query_objects(&self.prepared);
        let queries = experiment::affordance_queries(
            &self.prepared,
            &objects,
            aff.queries_per_object,
            self.seed,
        )
        .map_err(py_err)?;
        let e = experiment::evaluate_affordance(
            &model.inner,
            &bank.inner,
            &self.prepared.tax,
            &queries,
            aff.hoi_threshold,
            aff.keep_threshold,
        )
        .map_err(py_err)?;
        let dict = PyDict::new(py);
        dict.set_item("prf", to_py(py, &e.prf)?)?;
        dict.set_item("map", to_py(py, &e.map)?)?;
        dict.into_py_any(py)
    }
}

#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    geometry::iou(&bbox(a), &bbox(b))
}

#[pyfunction]
fn average_precision(tp: Vec<bool>, n_positives: usize) -> f64 {
    eval::average_precision(&tp, n_positives)
}

/// Two flattened `res x res` binary channels (human, object).
#[pyfunction]
#[pyo3(signature = (human_box, object_box, res = pipeline::SPATIAL_FULL_RES))]
fn spatial_pattern(human_box: [f64; 4], object_box: [f64; 4], res: usize) -> PyResult<Vec<u8>> {
    let m = pipeline::make_spatial_pattern_res(&bbox(human_box), &bbox(object_box), res)
        .map_err(py_err)?;
    Ok(m.as_slice().to_vec())
}

#[pyfunction]
#[pyo3(signature = (configs = 100, seed = 0))]
fn gradcheck(py: Python<'_>, configs: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let s = py.detach(|| verify::run(configs, seed)).map_err(py_err)?;
    to_py(py, &s)
}

/// Baseline vs transfer medians over `seeds`.
#[pyfunction]
#[pyo3(signature = (config = None, seeds = None, bank_sizes = None))]
fn reproduce_trends(
    py: Python<'_>,
    config: Option<&str>,
    seeds: Option<Vec<u64>>,
    bank_sizes: Option<Vec<usize>>,
) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config)?;
    let seeds = seeds.unwrap_or_else(|| cfg.trends.seeds.clone());
    let sizes = bank_sizes.unwrap_or_else(|| cfg.trends.bank_sizes.clone());
    let s = py
        .detach(|| experiment::run_trends(&cfg, &seeds, &sizes))
        .map_err(py_err)?;
    to_py(py, &s)
}

#[pymodule]
fn atl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaxonomy>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBank>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_trends, m)?)?;
    m.add("AtlConfigError", m.py().get_type::<AtlConfigError>())?;
    m.add("AtlDataError", m.py().get_type::<AtlDataError>())?;
    m.add(
        "AtlDivergenceError",
        m.py().get_type::<AtlDivergenceError>(),
    )?;
    Ok(())
}
