//! Python bindings. Configs cross the boundary as JSON strings with the same
//! schema as the CLI config sections; tensors cross as nested lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use motion_ddgan::evaluation::{self, Prior};
use motion_ddgan::motion::{self, SynthConfig};
use motion_ddgan::sampler::{Guidance, Sampler};
use motion_ddgan::schedule::{self, ScheduleKind};
use motion_ddgan::tensor::Tensor;
use motion_ddgan::training::{self, TrainConfig};
use motion_ddgan::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Integrity(_) | Error::Json(_) => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::SamplingDivergence { .. } | Error::NonFinite(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    let n = rows.len();
    Tensor::new(vec![n, cols], rows.into_iter().flatten().collect()).map_err(py_err)
}

fn nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (n, d) = (s[1], s[2]);
    t.data().chunks(n * d).map(|b| b.chunks(d).map(|r| r.to_vec()).collect()).collect()
}

/// A motion dataset in normalized frame-vector form.
#[pyclass(module = "motion_ddgan")]
#[derive(Clone)]
struct Dataset {
    inner: motion::Dataset,
}

#[pymethods]
impl Dataset {
    /// Synthetic dataset from a `SynthConfig` JSON (defaults if omitted).
    #[staticmethod]
    #[pyo3(signature = (config_json=None))]
    fn synth(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: SynthConfig = from_json(config_json)?;
        Ok(Self { inner: motion::synth_dataset(&cfg).map_err(py_err)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: motion::Dataset::read(path).map_err(py_err)? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(py_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyBytes>> {
        Ok(pyo3::types::PyBytes::new_bound(py, &self.inner.to_bytes().map_err(py_err)?))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: motion::Dataset::from_bytes(data).map_err(py_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames
    }

    #[getter]
    fn frame_dim(&self) -> usize {
        self.inner.frame_dim()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    /// Raw (unnormalized) frame vectors of clip `i`, `[frames][frame_dim]`.
    fn clip(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.inner.samples.get(i).ok_or_else(|| PyValueError::new_err("clip index out of range"))?;
        let d = self.inner.frame_dim();
        Ok(s.data.data().chunks(d).map(|r| r.to_vec()).collect())
    }

    fn split_alternate(&self) -> (Self, Self) {
        let (a, b) = self.inner.split_alternate();
        (Self { inner: a }, Self { inner: b })
    }
}

/// Noise schedule with its posterior table.
#[pyclass(module = "motion_ddgan")]
struct Schedule {
    inner: schedule::Schedule,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (steps, kind="cosine"))]
    fn new(steps: usize, kind: &str) -> PyResult<Self> {
        let kind: ScheduleKind = kind.parse().map_err(py_err)?;
        Ok(Self { inner: schedule::Schedule::new(steps, kind).map_err(py_err)? })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn beta(&self, t: usize) -> f64 {
        self.inner.beta(t)
    }

    fn alphabar(&self, t: usize) -> f64 {
        self.inner.alphabar(t)
    }

    /// `(coef1, coef2, variance, log_variance)` of `q(x_{t-1} | x_t, x_0)`.
    fn posterior_coeffs(&self, t: usize) -> PyResult<(f64, f64, f64, f64)> {
        let c = self.inner.posterior_coeffs(t).map_err(py_err)?;
        Ok((c.coef1, c.coef2, c.variance, c.log_variance))
    }
}

/// Training state: both players, EMA weights and optimizer moments.
#[pyclass(module = "motion_ddgan")]
struct Trainer {
    state: training::TrainState,
}

#[pymethods]
impl Trainer {
    /// Fresh state for `dataset` from a `TrainConfig` JSON.
    #[new]
    #[pyo3(signature = (dataset, config_json=None))]
    fn new(dataset: &Dataset, config_json: Option<&str>) -> PyResult<Self> {
        let cfg: TrainConfig = from_json(config_json)?;
        Ok(Self { state: training::TrainState::new(cfg, &dataset.inner).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { state: training::TrainState::load(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.state.save(path).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    #[getter]
    fn steps(&self) -> usize {
        self.state.model.schedule.steps()
    }

    fn config_json(&self) -> PyResult<String> {
        to_json(&self.state.config)
    }

    fn is_finished(&self) -> bool {
        self.state.is_finished()
    }

    /// One epoch; returns the loss row as a JSON object string.
    fn run_epoch(&mut self, dataset: &Dataset) -> PyResult<String> {
        let row = self.state.run_epoch(&dataset.inner).map_err(py_err)?;
        to_json(&row)
    }

    /// Generator fingerprint (hex SHA-256 of its parameters).
    fn fingerprint(&self) -> String {
        self.state.gen.fingerprint()
    }

    /// Normalized samples `[B][frames][frame_dim]` and the number of
    /// generator calls. `None` labels are unconditional.
    #[pyo3(signature = (labels, guidance=2.5, seed=0, use_ema=true))]
    fn sample(&self, labels: Vec<Option<usize>>, guidance: f64, seed: u64, use_ema: bool) -> PyResult<(Vec<Vec<Vec<f64>>>, usize)> {
        let sampler = Sampler::from_state(&self.state, use_ema);
        let mode = Guidance::from_scale(guidance).map_err(py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = sampler.sample(&labels, mode, &mut rng).map_err(py_err)?;
        Ok((nested(&out.x0), sampler.generator_calls()))
    }
}

/// Fréchet distance between two `[M][d]` feature sets.
#[pyfunction]
fn fid(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    evaluation::fid(&matrix(a)?, &matrix(b)?).map_err(py_err)
}

/// Mean pairwise distance over random pairs.
#[pyfunction]
#[pyo3(signature = (features, pairs=300, seed=0))]
fn diversity(features: Vec<Vec<f64>>, pairs: usize, seed: u64) -> PyResult<f64> {
    evaluation::diversity(&matrix(features)?, pairs, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)
}

/// Gaussianity of exact two-delta denoising posteriors across step sizes:
/// `[(step_size, gaussianity)]`.
#[pyfunction]
#[pyo3(signature = (step_sizes, chain_steps=1000, start=130, x_t=0.0))]
fn gaussianity_sweep(step_sizes: Vec<usize>, chain_steps: usize, start: usize, x_t: f64) -> PyResult<Vec<(usize, f64)>> {
    let sched = schedule::Schedule::for_analysis(chain_steps, ScheduleKind::Linear).map_err(py_err)?;
    let rows = evaluation::gaussianity_sweep(&Prior::two_delta(), &sched, start, x_t, &step_sizes).map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.step_size, r.gaussianity)).collect())
}

/// Run the command-line interface in-process; returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    motion_ddgan::cli::main_with_args(std::iter::once("motion-ddgan".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "motion_ddgan")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(gaussianity_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
