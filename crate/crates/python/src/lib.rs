//! Python bindings. Tensors cross the boundary as nested lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use selforget::diffusion::{
    checkpoint, sample as draw_samples, Denoiser as CoreDenoiser, EpsModel, NoiseSchedule,
};
use selforget::harness::{self, RunConfig as CoreConfig};
use selforget::metrics::{self, FlattenCosine, SscdNormConfig};
use selforget::numerics::Tensor;
use selforget::objectives::siss_weights as core_siss_weights;
use selforget::seeded_rng;
use selforget::selective::{self, FrequencyFilterConfig, ImageShape, TimeWindowConfig};

fn err(e: selforget::Error) -> PyErr {
    match e {
        selforget::Error::Io { .. } | selforget::Error::Aborted { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn image(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, ImageShape)> {
    let shape = ImageShape::new(rows.len(), rows.first().map_or(0, Vec::len));
    if rows.iter().any(|r| r.len() != shape.width) || shape.numel() == 0 {
        return Err(PyValueError::new_err(
            "image must be a non-empty rectangular list of rows",
        ));
    }
    Ok((rows.concat(), shape))
}

/// Flat key = value run configuration.
#[pyclass(name = "RunConfig", module = "selforget")]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
}

#[pymethods]
impl RunConfig {
    /// `preset` is "toy" (two moons) or "image" (synthetic textures).
    #[new]
    #[pyo3(signature = (preset = "toy"))]
    fn new(preset: &str) -> PyResult<Self> {
        let inner = match preset {
            "toy" => CoreConfig::default(),
            "image" => CoreConfig::image_default(),
            other => return Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
        };
        Ok(RunConfig { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreConfig::parse(text)
            .map(|inner| RunConfig { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfig::load(&path)
            .map(|inner| RunConfig { inner })
            .map_err(err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key '{key}'")))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn run_id(&self) -> String {
        self.inner.run_id()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(run_id='{}')", self.inner.run_id())
    }
}

/// ε-prediction MLP together with the noise schedule it was trained under.
#[pyclass(name = "Denoiser", module = "selforget")]
#[derive(Clone)]
struct Denoiser {
    model: CoreDenoiser,
    sched: NoiseSchedule,
}

#[pymethods]
impl Denoiser {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, sched) = checkpoint::load(&path).map_err(err)?;
        Ok(Denoiser { model, sched })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.model, &self.sched).map_err(err)
    }

    /// Predicted noise for rows `x` at per-row timesteps `t`.
    fn predict(&self, x: Vec<Vec<f64>>, t: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let out = self.model.predict(&to_tensor(x)?, &t).map_err(err)?;
        Ok(to_rows(&out))
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let dim = self.model.arch().data_dim;
        let x =
            draw_samples(&self.model, dim, &self.sched, n, &mut seeded_rng(seed)).map_err(err)?;
        Ok(to_rows(&x))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    #[getter]
    fn data_dim(&self) -> usize {
        self.model.arch().data_dim
    }

    #[getter]
    fn steps(&self) -> usize {
        self.sched.steps()
    }
}

/// Data rows with the forget/retain partition as a dict.
#[pyfunction]
fn make_dataset(py: Python<'_>, config: &RunConfig) -> PyResult<Py<PyAny>> {
    let data = harness::make_dataset(&config.inner.dataset).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("data", to_rows(&data.data))?;
    out.set_item("forget_idx", data.forget_idx)?;
    out.set_item("retain_idx", data.retain_idx)?;
    Ok(out.into_any().unbind())
}

type Row = (String, usize, String, String, f64);

fn rows(record: &harness::RunRecord) -> Vec<Row> {
    record
        .rows
        .iter()
        .map(|r| {
            (
                r.run_id.clone(),
                r.step,
                r.sample_id.clone(),
                r.metric.clone(),
                r.value,
            )
        })
        .collect()
}

/// Trains the base model; returns it with the metric rows
/// `(run_id, step, sample_id, metric, value)`.
#[pyfunction]
fn train_base(py: Python<'_>, config: &RunConfig) -> PyResult<(Denoiser, Vec<Row>)> {
    let cfg = config.inner.clone();
    py.detach(move || {
        let data = harness::make_dataset(&cfg.dataset)?;
        let (model, record) = harness::train_base(&cfg, &data, None)?;
        Ok((
            Denoiser {
                model,
                sched: cfg.noise_schedule()?,
            },
            rows(&record),
        ))
    })
    .map_err(err)
}

/// Unlearns the configured forget set starting from `base`.
#[pyfunction]
fn run_unlearn(
    py: Python<'_>,
    config: &RunConfig,
    base: &Denoiser,
) -> PyResult<(Denoiser, Vec<Row>)> {
    let cfg = config.inner.clone();
    let base = base.model.clone();
    py.detach(move || {
        let data = harness::make_dataset(&cfg.dataset)?;
        let (model, record) = harness::run_unlearn(&cfg, &base, &data, None)?;
        Ok((
            Denoiser {
                model,
                sched: cfg.noise_schedule()?,
            },
            rows(&record),
        ))
    })
    .map_err(err)
}

/// `(window, start, end, hit_rate, coverage)`.
type WindowRow = (String, f64, f64, f64, f64);

/// Early, middle and late window study: `(window, start, end, hit_rate, coverage)`
/// rows, base model first. With `out` the run directory is written too.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn toy_figure(
    py: Python<'_>,
    config: &RunConfig,
    out: Option<PathBuf>,
) -> PyResult<Vec<WindowRow>> {
    let cfg = config.inner.clone();
    let fig = py
        .detach(move || harness::toy_figure(&cfg, out.as_deref()))
        .map_err(err)?;
    Ok(std::iter::once(&fig.base)
        .chain(&fig.windows)
        .map(|w| {
            (
                w.name.clone(),
                w.start,
                w.end,
                w.forget_hit_rate,
                w.retain_coverage,
            )
        })
        .collect())
}

/// Probability of each timestep under the windowed distribution.
#[pyfunction]
fn time_window_pmf(k: f64, t1: usize, t2: usize, steps: usize) -> PyResult<Vec<f64>> {
    let cfg = TimeWindowConfig::new(k, t1, t2, steps).map_err(err)?;
    (0..steps).map(|t| cfg.pdf(t).map_err(err)).collect()
}

#[pyfunction]
#[pyo3(signature = (k, t1, t2, steps, n, seed = 0))]
fn sample_timesteps(
    k: f64,
    t1: usize,
    t2: usize,
    steps: usize,
    n: usize,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let cfg = TimeWindowConfig::new(k, t1, t2, steps).map_err(err)?;
    let mut rng = seeded_rng(seed);
    Ok((0..n).map(|_| cfg.sample(&mut rng)).collect())
}

/// Radial low-pass: frequencies beyond `r_t` of the corner radius are scaled by `s`.
#[pyfunction]
fn low_pass(pixels: Vec<Vec<f64>>, r_t: f64, s: f64) -> PyResult<Vec<Vec<f64>>> {
    let (flat, shape) = image(pixels)?;
    let cfg = FrequencyFilterConfig::new(r_t, s).map_err(err)?;
    let out = selective::low_pass_slice(&flat, shape, &cfg).map_err(err)?;
    Ok(out.chunks(shape.width).map(<[f64]>::to_vec).collect())
}

/// Radially averaged power spectrum as `(radius, power, counts)`.
#[pyfunction]
#[pyo3(signature = (pixels, bins = 8))]
fn psd_radial(pixels: Vec<Vec<f64>>, bins: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let (flat, shape) = image(pixels)?;
    let c = metrics::psd_radial_slice(&flat, shape, bins).map_err(err)?;
    Ok((c.radius, c.power, c.counts))
}

/// Cosine similarity of flattened inputs.
#[pyfunction]
fn sscd_plain(x0: Vec<f64>, x0_hat: Vec<f64>) -> PyResult<f64> {
    metrics::sscd_plain(&x0, &x0_hat, &FlattenCosine).map_err(err)
}

/// Similarity after pushing `x0` along the reconstruction error with a
/// bounded perturbation; `rho=None` scales the default to the input size.
#[pyfunction]
#[pyo3(signature = (x0, x0_hat, rho = None))]
fn sscd_norm(x0: Vec<f64>, x0_hat: Vec<f64>, rho: Option<f64>) -> PyResult<f64> {
    let mut cfg = SscdNormConfig::for_numel(x0.len());
    if let Some(r) = rho {
        cfg.rho = r;
    }
    metrics::sscd_norm(&x0, &x0_hat, &FlattenCosine, &cfg).map_err(err)
}

/// Importance weights `(w_keep, w_forget)` of a mixture draw `m` at step `t`
/// of the linear schedule described by `steps`, `beta_start`, `beta_end`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn siss_weights(
    m: Vec<f64>,
    forget: Vec<f64>,
    retain: Vec<f64>,
    t: usize,
    lam: f64,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> PyResult<(f64, f64)> {
    let sched = NoiseSchedule::linear(steps, beta_start, beta_end).map_err(err)?;
    core_siss_weights(&m, &forget, &retain, t, lam, &sched).map_err(err)
}

/// Runs the command line with `argv` (program name excluded); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, argv: Vec<String>) -> i32 {
    py.detach(|| harness::cli(std::iter::once("selforget".to_string()).chain(argv)))
}

#[pymodule]
#[pyo3(name = "selforget")]
fn selforget_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunConfig>()?;
    m.add_class::<Denoiser>()?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_base, m)?)?;
    m.add_function(wrap_pyfunction!(run_unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(toy_figure, m)?)?;
    m.add_function(wrap_pyfunction!(time_window_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_timesteps, m)?)?;
    m.add_function(wrap_pyfunction!(low_pass, m)?)?;
    m.add_function(wrap_pyfunction!(psd_radial, m)?)?;
    m.add_function(wrap_pyfunction!(sscd_plain, m)?)?;
    m.add_function(wrap_pyfunction!(sscd_norm, m)?)?;
    m.add_function(wrap_pyfunction!(siss_weights, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
