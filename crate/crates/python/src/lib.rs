//! Python bindings for the `dcscan` crate.

use std::path::PathBuf;

use dcscan::config::RunConfig;
use dcscan::data::{gen_synthetic, overlap_metrics, surface_metrics, Sample, SplitDataset, SyntheticSpec};
use dcscan::losses::{lambda_schedule, ScheduleConfig};
use dcscan::network::{NetworkConfig, SegNetwork};
use dcscan::routes::{route_order, RouteSet, ScanDirection};
use dcscan::tensor::Tensor;
use dcscan::trainer::{predict, CoTrainState, Which};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: dcscan::Error) -> PyErr {
    match e {
        dcscan::Error::Config(_) | dcscan::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn direction(name: &str) -> PyResult<ScanDirection> {
    ScanDirection::ALL
        .into_iter()
        .find(|d| d.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| PyValueError::new_err(format!("unknown scan direction {name:?}")))
}

fn image(pixels: Vec<f64>, size: usize) -> PyResult<Tensor> {
    Tensor::new([size, size, 1], pixels).map_err(err)
}

/// Row-major cell indices visited by one scan direction, e.g. `"D-fwd"`.
#[pyfunction]
fn scan_order(name: &str, height: usize, width: usize) -> PyResult<Vec<usize>> {
    Ok(route_order(direction(name)?, height, width).map_err(err)?.order().to_vec())
}

/// Unsupervised weight at iteration `t`.
#[pyfunction]
fn warmup_weight(t: usize, t_max: usize) -> PyResult<f64> {
    lambda_schedule(t, &ScheduleConfig { t_max }).map_err(err)
}

/// `(asd, hd95)` between two boolean masks; `None` when exactly one is empty.
#[pyfunction]
fn surface_distances(pred: Vec<bool>, gt: Vec<bool>, height: usize, width: usize) -> PyResult<Option<(f64, f64)>> {
    match surface_metrics(&pred, &gt, height, width) {
        Ok(s) => Ok(Some((s.asd, s.hd95))),
        Err(dcscan::Error::UndefinedSurfaceDistance) => Ok(None),
        Err(e) => Err(err(e)),
    }
}

/// `(mean Dice, mIoU)` over foreground classes.
#[pyfunction]
fn overlap(pred: Vec<usize>, gt: Vec<usize>, classes: usize) -> PyResult<(f64, f64)> {
    let m = overlap_metrics(&pred, &gt, classes).map_err(err)?;
    Ok((m.mean_dice(), m.miou()))
}

/// One synthetic bar image with its label, both flattened row-major.
#[pyfunction]
#[pyo3(signature = (seed, size=32, noise_sigma=0.1))]
fn synthetic_sample(seed: u64, size: usize, noise_sigma: f64) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let spec = SyntheticSpec { image_size: size, noise_sigma, seed, ..Default::default() };
    spec.validate().map_err(err)?;
    let s = spec.sample(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    Ok((s.image.data().to_vec(), s.label.unwrap_or_default()))
}

/// A segmentation network scanning one route set.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: SegNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (route_set="HV", seed=0, image_size=32))]
    fn new(route_set: &str, seed: u64, image_size: usize) -> PyResult<Self> {
        let cfg = NetworkConfig { image_size, ..Default::default() };
        let set: RouteSet = route_set.parse().map_err(err)?;
        let inner = SegNetwork::new(&cfg, set, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork { inner: SegNetwork::load(&dir).map_err(err)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(err)
    }

    #[getter]
    fn route_set(&self) -> &'static str {
        self.inner.route_set().tag()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.config().image_size
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().numel()
    }

    /// Flattened `H×W×classes` logits for a flattened square image.
    fn logits(&self, pixels: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = image(pixels, self.image_size())?;
        Ok(self.inner.predict_logits(&x).map_err(err)?.data().to_vec())
    }

    /// Per-pixel argmax class map.
    fn predict(&self, pixels: Vec<f64>) -> PyResult<Vec<usize>> {
        predict(&self.inner, &image(pixels, self.image_size())?).map_err(err)
    }

    /// Same weights scanning the other route set.
    fn with_route_set(&self, route_set: &str) -> PyResult<Self> {
        Ok(PyNetwork { inner: self.inner.with_route_set(route_set.parse().map_err(err)?) })
    }
}

/// Dual-network co-training on synthetic data, driven from a JSON run configuration.
#[pyclass(name = "CoTrainer")]
struct PyCoTrainer {
    state: CoTrainState,
    data: SplitDataset,
}

#[pymethods]
impl PyCoTrainer {
    #[new]
    #[pyo3(signature = (config_json="{}"))]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_json(config_json, &PathBuf::from("<python>")).map_err(err)?;
        let data = gen_synthetic(&cfg.synthetic).map_err(err)?;
        let state = CoTrainState::new(&cfg.network, cfg.trainer, cfg.augment, cfg.losses).map_err(err)?;
        Ok(PyCoTrainer { state, data })
    }

    #[getter]
    fn t(&self) -> usize {
        self.state.t
    }

    /// One iteration; returns the loss terms as a dict.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let b = self.state.step(&self.data).map_err(err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("t", b.t)?;
        d.set_item("sup", b.sup)?;
        d.set_item("unsup", b.unsup)?;
        d.set_item("dfc", b.dfc)?;
        d.set_item("lambda", b.lambda)?;
        d.set_item("total", b.total)?;
        Ok(d)
    }

    /// Metric report of network `"a"` or `"b"` on the test split, as JSON.
    #[pyo3(signature = (network="a"))]
    fn evaluate(&self, network: &str) -> PyResult<String> {
        let which = match network {
            "a" | "A" => Which::A,
            "b" | "B" => Which::B,
            _ => return Err(PyValueError::new_err("network must be \"a\" or \"b\"")),
        };
        let report = self.state.evaluate(self.eval_set(), which).map_err(err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Mean cosine distance between the two networks' pooled features.
    fn diversity(&self) -> PyResult<f64> {
        self.state.diversity_measure(self.eval_set()).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.state.save(&dir).map_err(err)
    }
}

impl PyCoTrainer {
    fn eval_set(&self) -> &[Sample] {
        if self.data.test.is_empty() {
            &self.data.labeled
        } else {
            &self.data.test
        }
    }
}

#[pymodule]
fn dcscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scan_order, m)?)?;
    m.add_function(wrap_pyfunction!(warmup_weight, m)?)?;
    m.add_function(wrap_pyfunction!(surface_distances, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_sample, m)?)?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyCoTrainer>()?;
    Ok(())
}
