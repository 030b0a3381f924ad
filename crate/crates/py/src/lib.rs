//! Python bindings: series containers, training, sampling and metrics.

use std::path::PathBuf;

use chrono::{NaiveDateTime, TimeDelta};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wiae::forecast::{self, ForecastEnsemble, SampleOptions};
use wiae::ingest::{self, CsvSchema};
use wiae::{metrics, oracle, Error, NetConfig, SeriesFrame, TrainConfig, WiaeCheckpoint};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_time(s: &str) -> PyResult<NaiveDateTime> {
    ingest::parse_iso(s).map_err(PyValueError::new_err)
}

#[pyclass(name = "SeriesFrame", module = "pywiae", frozen)]
struct PySeries(SeriesFrame);

#[pymethods]
impl PySeries {
    /// `values` is a list of rows, one value per channel.
    #[new]
    #[pyo3(signature = (start, step_seconds, channels, values))]
    fn new(start: &str, step_seconds: i64, channels: Vec<String>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        let flat: Vec<f64> = values.into_iter().flatten().collect();
        SeriesFrame::new(parse_time(start)?, TimeDelta::seconds(step_seconds), channels, flat).map(PySeries).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, schema = "canonical", max_gap = 0))]
    fn read_csv(path: PathBuf, schema: &str, max_gap: usize) -> PyResult<Self> {
        let schema = CsvSchema::preset(schema).map_err(err)?;
        let grid = ingest::load_csv(&path, &schema).map_err(err)?;
        ingest::fill_gaps(&grid, max_gap).map(PySeries).map_err(err)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        ingest::write_csv_file(&path, &self.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn channels(&self) -> Vec<String> {
        self.0.channels().to_vec()
    }

    #[getter]
    fn start(&self) -> String {
        ingest::format_time(self.0.start())
    }

    #[getter]
    fn step_seconds(&self) -> i64 {
        self.0.step().num_seconds()
    }

    fn timestamp(&self, t: usize) -> PyResult<String> {
        if t >= self.0.len() {
            return Err(PyValueError::new_err(format!("index {t} out of range")));
        }
        Ok(ingest::format_time(self.0.timestamp(t)))
    }

    fn channel(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.0.dim() {
            return Err(PyValueError::new_err(format!("channel {c} out of range")));
        }
        Ok(self.0.channel(c))
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        self.0.slice(start..end).map(PySeries).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("SeriesFrame(len={}, channels={:?}, start={})", self.0.len(), self.0.channels(), self.start())
    }
}

#[pyclass(name = "ArProcess", module = "pywiae", frozen)]
struct PyAr(oracle::ArProcess);

#[pymethods]
impl PyAr {
    #[new]
    #[pyo3(signature = (coeffs, sigma = 1.0))]
    fn new(coeffs: Vec<f64>, sigma: f64) -> PyResult<Self> {
        oracle::ArProcess::new(coeffs, sigma).map(PyAr).map_err(err)
    }

    #[pyo3(signature = (n, seed = 0, burn_in = oracle::DEFAULT_BURN_IN))]
    fn generate(&self, n: usize, seed: u64, burn_in: usize) -> PyResult<PySeries> {
        oracle::gen_ar(&self.0, n, seed, burn_in).map(PySeries).map_err(err)
    }

    /// Closed-form `(mean, variance)` of `X_{t+T}` given the history.
    fn conditional(&self, history: Vec<f64>, horizon: usize) -> PyResult<(f64, f64)> {
        oracle::ar_conditional(&self.0, &history, horizon).map_err(err)
    }

    fn stationary_variance(&self) -> f64 {
        self.0.stationary_variance()
    }
}

#[pyclass(name = "Ensemble", module = "pywiae", frozen)]
struct PyEnsemble(ForecastEnsemble);

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn origin(&self) -> String {
        ingest::format_time(self.0.origin)
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon
    }

    fn __len__(&self) -> usize {
        self.0.k()
    }

    /// Samples as a list of rows, one value per channel.
    #[getter]
    fn samples(&self) -> Vec<Vec<f64>> {
        (0..self.0.k()).map(|k| self.0.sample(k).to_vec()).collect()
    }

    fn mmse(&self) -> Vec<f64> {
        forecast::point_mmse(&self.0)
    }

    fn mmae(&self) -> Vec<f64> {
        forecast::point_mmae(&self.0)
    }

    fn quantile(&self, q: f64) -> PyResult<Vec<f64>> {
        forecast::quantile(&self.0, q).map_err(err)
    }

    fn interval(&self, beta: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        forecast::interval(&self.0, beta).map(|i| (i.lower, i.upper)).map_err(err)
    }
}

#[pyclass(name = "Model", module = "pywiae", frozen)]
struct PyModel(WiaeCheckpoint);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        WiaeCheckpoint::load_file(&path).map(PyModel).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_file(&path).map_err(err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.config.m
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.config.horizon
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.config.d
    }

    /// Learned innovations for every position with a full window, as rows.
    fn innovations(&self, series: &PySeries) -> PyResult<Vec<Vec<f64>>> {
        let s = &series.0;
        let mut z = Vec::with_capacity(s.values().len());
        for t in 0..s.len() {
            for c in 0..s.dim() {
                z.push(self.0.norm.normalize_value(c, s.value(t, c)) as f32);
            }
        }
        let v = wiae::net::encode_sequence(&self.0.config, &self.0.params.encoder, &z).map_err(err)?;
        Ok((0..v.rows()).map(|r| v.row(r).iter().map(|&x| x as f64).collect()).collect())
    }

    /// Sample `X_{t+T}` given a history ending at the origin `t`.
    #[pyo3(signature = (history, horizon = None, samples = forecast::DEFAULT_SAMPLES, seed = 0, path = false))]
    fn sample(&self, py: Python<'_>, history: &PySeries, horizon: Option<usize>, samples: usize, seed: u64, path: bool) -> PyResult<PyEnsemble> {
        let opts = SampleOptions { horizon: horizon.unwrap_or(self.0.config.horizon), samples, seed, path };
        let ckpt = &self.0;
        let hist = &history.0;
        py.detach(|| forecast::gpf_sample_with(ckpt, hist, &opts)).map(PyEnsemble).map_err(err)
    }

    /// One ensemble per origin index into `series`.
    #[pyo3(signature = (series, origins, horizon = None, samples = forecast::DEFAULT_SAMPLES, seed = 0))]
    fn forecast(
        &self,
        py: Python<'_>,
        series: &PySeries,
        origins: Vec<usize>,
        horizon: Option<usize>,
        samples: usize,
        seed: u64,
    ) -> PyResult<Vec<PyEnsemble>> {
        let opts = SampleOptions { horizon: horizon.unwrap_or(self.0.config.horizon), samples, seed, path: false };
        let ckpt = &self.0;
        let s = &series.0;
        let out = py.detach(|| forecast::forecast_origins(ckpt, s, &origins, &opts)).map_err(err)?;
        Ok(out.into_iter().map(PyEnsemble).collect())
    }
}

/// Fit a model on every row of `series`.
#[pyfunction]
#[pyo3(signature = (series, m = 16, horizon = 1, hidden = 16, epochs = 10, batch_size = 64, lr = 1e-3, lambda_ = 1.0,
                    critic_steps = 5, gp_weight = 10.0, steps_per_epoch = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    series: &PySeries,
    m: usize,
    horizon: usize,
    hidden: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    lambda_: f64,
    critic_steps: usize,
    gp_weight: f64,
    steps_per_epoch: Option<usize>,
    seed: u64,
) -> PyResult<PyModel> {
    let mut net = NetConfig::new(m, series.0.dim(), horizon);
    net.hidden = hidden;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        lr,
        lambda: lambda_,
        critic_steps,
        gp_weight,
        steps_per_epoch,
        seed,
        ..TrainConfig::default()
    };
    let s = &series.0;
    let out = py.detach(|| wiae::train(s, &net, &cfg)).map_err(err)?;
    Ok(PyModel(out.checkpoint))
}

#[pyfunction]
fn nmse(truth: Vec<f64>, forecasts: Vec<f64>) -> PyResult<f64> {
    metrics::nmse(&truth, &forecasts).map_err(err)
}

#[pyfunction]
fn nmae(truth: Vec<f64>, forecasts: Vec<f64>) -> PyResult<f64> {
    metrics::nmae(&truth, &forecasts).map_err(err)
}

/// `forecasts[i]` targets `series[i + horizon]`.
#[pyfunction]
fn mase(series: Vec<f64>, forecasts: Vec<f64>, horizon: usize) -> PyResult<f64> {
    metrics::mase(&series, &forecasts, horizon).map_err(err)
}

#[pyfunction]
fn smape(truth: Vec<f64>, forecasts: Vec<f64>) -> PyResult<f64> {
    metrics::smape(&truth, &forecasts).map(|(v, _)| v).map_err(err)
}

#[pyfunction]
fn crps(samples: Vec<f64>, y: f64) -> PyResult<f64> {
    metrics::crps_empirical(&samples, y).map_err(err)
}

#[pyfunction]
fn gaussian_crps(mean: f64, std: f64, y: f64) -> PyResult<f64> {
    oracle::gaussian_crps(mean, std, y).map_err(err)
}

#[pyfunction]
fn hurst(series: Vec<f64>) -> PyResult<f64> {
    metrics::hurst_rs(&series).map(|e| e.exponent).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (series, order = 1))]
fn dfa(series: Vec<f64>, order: usize) -> PyResult<f64> {
    metrics::dfa(&series, order).map(|e| e.exponent).map_err(err)
}

#[pyfunction]
fn uniformity_ks(samples: Vec<f64>) -> PyResult<f64> {
    oracle::uniformity_ks(&samples).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (seq, max_lag = 10))]
fn autocorrelation(seq: Vec<f64>, max_lag: usize) -> PyResult<Vec<f64>> {
    oracle::independence_autocorr(&seq, max_lag).map_err(err)
}

#[pymodule]
fn pywiae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyAr>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(nmae, m)?)?;
    m.add_function(wrap_pyfunction!(mase, m)?)?;
    m.add_function(wrap_pyfunction!(smape, m)?)?;
    m.add_function(wrap_pyfunction!(crps, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_crps, m)?)?;
    m.add_function(wrap_pyfunction!(hurst, m)?)?;
    m.add_function(wrap_pyfunction!(dfa, m)?)?;
    m.add_function(wrap_pyfunction!(uniformity_ks, m)?)?;
    m.add_function(wrap_pyfunction!(autocorrelation, m)?)?;
    Ok(())
}
