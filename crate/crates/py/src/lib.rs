//! Python bindings: models, divergences, data generation, partitioning,
//! experiment runs and the quadratic bound check.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uapdfl_core::datagen::{
    class_set_partition, dirichlet_partition, gen_gaussian_mixture, shard_partition, Partition,
    SyntheticDataset, DEFAULT_MIN_SAMPLES,
};
use uapdfl_core::harness::{self, ExperimentSpec};
use uapdfl_core::nn::LayeredModel;
use uapdfl_core::protocol::{run_experiment as core_run, Algorithm};
use uapdfl_core::representation::{
    aux_representation, kl_divergence, make_unit_tensor, unit_representation, DEFAULT_EPS,
};
use uapdfl_core::seed::SimRng;
use uapdfl_core::{Error, Matrix};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn seeded(seed: u64) -> SimRng {
    use uapdfl_core::seed::rng_for;
    rng_for(seed, &[])
}

/// Numerically stable softmax of a logit vector.
#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    uapdfl_core::nn::softmax(&logits).map_err(py_err)
}

/// `KL(p || q)` in nats after clamping entries at `eps` and renormalizing.
#[pyfunction]
#[pyo3(signature = (p, q, eps = DEFAULT_EPS))]
fn kl_div(p: Vec<f64>, q: Vec<f64>, eps: f64) -> PyResult<f64> {
    kl_divergence(&p, &q, eps).map_err(py_err)
}

/// Symmetrized divergence `½ KL(p || q) + ½ KL(q || p)`.
#[pyfunction]
#[pyo3(signature = (p, q, eps = DEFAULT_EPS))]
fn js_div(p: Vec<f64>, q: Vec<f64>, eps: f64) -> PyResult<f64> {
    let a = kl_divergence(&p, &q, eps).map_err(py_err)?;
    let b = kl_divergence(&q, &p, eps).map_err(py_err)?;
    Ok(0.5 * (a + b))
}

#[pyclass(name = "Model", module = "uapdfl", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: LayeredModel,
}

#[pymethods]
impl PyModel {
    /// Glorot-initialized MLP with ReLU hidden layers and identity output.
    #[staticmethod]
    #[pyo3(signature = (dims, split_index, seed = 0))]
    fn mlp(dims: Vec<usize>, split_index: usize, seed: u64) -> PyResult<Self> {
        let inner = LayeredModel::mlp(&dims, split_index, &mut seeded(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Feature extractor of `g_from` joined with the classifier of `h_from`.
    #[staticmethod]
    fn combine(g_from: &PyModel, h_from: &PyModel) -> PyResult<Self> {
        let (g, _) = g_from.inner.split();
        let (_, h) = h_from.inner.split();
        let inner = LayeredModel::combine(g, h).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn split_index(&self) -> usize {
        self.inner.split_index()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.inner.input_dim()];
        d.extend(self.inner.layers().iter().map(|l| l.out_dim()));
        d
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params().copied().collect()
    }

    /// Logits for each input row.
    fn forward(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Matrix::from_rows(&rows).map_err(py_err)?;
        let out = self.inner.forward(&x).map_err(py_err)?;
        Ok(out.iter_rows().map(<[f64]>::to_vec).collect())
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = Matrix::from_rows(&rows).map_err(py_err)?;
        self.inner.predict(&x).map_err(py_err)
    }

    /// Softmax output on the constant unit tensor.
    #[pyo3(signature = (fill = 1.0))]
    fn unit_representation(&self, fill: f64) -> PyResult<Vec<f64>> {
        let unit = make_unit_tensor(self.inner.input_dim(), fill).map_err(py_err)?;
        Ok(unit_representation(&self.inner, &unit)
            .map_err(py_err)?
            .probs()
            .to_vec())
    }

    /// Feature-extractor output on the constant unit tensor.
    #[pyo3(signature = (fill = 1.0))]
    fn aux_representation(&self, fill: f64) -> PyResult<Vec<f64>> {
        let unit = make_unit_tensor(self.inner.input_dim(), fill).map_err(py_err)?;
        Ok(aux_representation(&self.inner, &unit)
            .map_err(py_err)?
            .features()
            .to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Model(dims={:?}, split_index={})", self.dims(), self.inner.split_index())
    }
}

#[pyclass(name = "Dataset", module = "uapdfl")]
struct PyDataset {
    inner: SyntheticDataset,
}

type Split = (Vec<Vec<usize>>, Vec<Vec<usize>>);

fn split_of(p: Partition) -> Split {
    (p.train, p.test)
}

#[pymethods]
impl PyDataset {
    /// Gaussian-mixture classification data with an 80/20 per-class split.
    #[staticmethod]
    #[pyo3(signature = (num_classes = 4, input_dim = 16, samples_per_class = 300, spread = 6.0, seed = 0))]
    fn generate(
        num_classes: usize,
        input_dim: usize,
        samples_per_class: usize,
        spread: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = gen_gaussian_mixture(num_classes, input_dim, samples_per_class, spread, seed)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().iter_rows().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn train_indices(&self) -> Vec<usize> {
        self.inner.train_indices().to_vec()
    }

    #[getter]
    fn test_indices(&self) -> Vec<usize> {
        self.inner.test_indices().to_vec()
    }

    /// Per-class Dirichlet shares; returns `(train, test)` index lists per client.
    #[pyo3(signature = (clients, beta, min_samples = DEFAULT_MIN_SAMPLES, seed = 0))]
    fn dirichlet_partition(&self, clients: usize, beta: f64, min_samples: usize, seed: u64) -> PyResult<Split> {
        dirichlet_partition(&self.inner, clients, beta, min_samples, seed)
            .map(split_of)
            .map_err(py_err)
    }

    #[pyo3(signature = (clients, classes_per_client, min_samples = DEFAULT_MIN_SAMPLES, seed = 0))]
    fn shard_partition(
        &self,
        clients: usize,
        classes_per_client: usize,
        min_samples: usize,
        seed: u64,
    ) -> PyResult<Split> {
        shard_partition(&self.inner, clients, classes_per_client, min_samples, seed)
            .map(split_of)
            .map_err(py_err)
    }

    #[pyo3(signature = (class_sets, seed = 0))]
    fn class_set_partition(&self, class_sets: Vec<Vec<usize>>, seed: u64) -> PyResult<Split> {
        class_set_partition(&self.inner, &class_sets, seed)
            .map(split_of)
            .map_err(py_err)
    }
}

#[pyclass(name = "Config", module = "uapdfl", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentSpec,
}

#[pymethods]
impl PyConfig {
    #[getter]
    fn clients(&self) -> usize {
        self.inner.clients
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.protocol.rounds
    }

    #[getter]
    fn arms(&self) -> Vec<String> {
        self.inner.arms.iter().map(|a| a.name().to_string()).collect()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn out_dir(&self) -> String {
        self.inner.out_dir.display().to_string()
    }

    fn to_toml(&self) -> PyResult<String> {
        harness::render(&self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(clients={}, rounds={}, arms={:?}, seeds={:?})",
            self.inner.clients,
            self.inner.protocol.rounds,
            self.arms(),
            self.inner.seeds
        )
    }
}

/// Parses a TOML experiment document; an empty string gives the defaults.
#[pyfunction]
#[pyo3(signature = (text = ""))]
fn parse_config(text: &str) -> PyResult<PyConfig> {
    harness::parse_config(text)
        .map(|inner| PyConfig { inner })
        .map_err(py_err)
}

fn arm_of(name: &str) -> PyResult<Algorithm> {
    name.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown arm `{name}`")))
}

/// Runs one arm for one seed and returns per-round aggregates.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig, arm: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let setup = config.inner.setup(arm_of(arm)?);
    let out = core_run(&setup, seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("arm", out.algorithm.name())?;
    d.set_item("seed", seed)?;
    d.set_item("final_accuracy", out.final_mean_accuracy())?;
    d.set_item(
        "mean_accuracy",
        out.records.iter().map(|r| r.mean_accuracy()).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "dropouts",
        out.records.iter().map(|r| r.dropout_count()).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "client_accuracy",
        out.final_round()
            .clients
            .iter()
            .map(|c| c.test_accuracy)
            .collect::<Vec<_>>(),
    )?;
    d.set_item("total_scalars", out.ledger.total().total())?;
    Ok(d)
}

/// Runs the configured matrix, writing files under the config's `out_dir`.
/// Returns the summary as a JSON string.
#[pyfunction]
fn run_matrix(config: &PyConfig) -> PyResult<String> {
    harness::run_matrix(&config.inner).map_err(py_err)?;
    std::fs::read_to_string(config.inner.out_dir.join("summary.json"))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Noise-free trajectory and Monte Carlo mean of noisy trajectories on
/// random strongly convex quadratics.
#[pyfunction]
#[pyo3(signature = (config, seed = 0))]
fn bound_check<'py>(py: Python<'py>, config: &PyConfig, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let out = harness::bound_check(&config.inner, seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("holds", out.holds(1.05))?;
    d.set_item("noise_floor", out.noise_floor)?;
    d.set_item("noise_free_gaps", out.noise_free_gaps)?;
    d.set_item("noise_free_bounds", out.noise_free_bounds)?;
    d.set_item("mean_gaps", out.mean_gaps)?;
    d.set_item("bounds", out.bounds)?;
    Ok(d)
}

#[pymodule]
fn uapdfl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(kl_div, m)?)?;
    m.add_function(wrap_pyfunction!(js_div, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(bound_check, m)?)?;
    m.add("ARMS", Algorithm::ALL.iter().map(|a| a.name()).collect::<Vec<_>>())?;
    Ok(())
}
