//! Python bindings. Signals cross the boundary as lists of floats at
//! 16 kHz; spectrograms as `(real, imag)` pairs of `[frames][bins]` lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use saec::baselines::{nlms_cancel as nlms, wiener_suppress as wiener, NlmsParams, NlmsState, WienerParams};
use saec::dsp::{istft_to_len, stft as forward_stft, ComplexSpectrogram, FrameParams, Waveform, SAMPLE_RATE};
use saec::harness::{self, Algo, ExperimentConfig};
use saec::neural::{checkpoint, Depth, ModelConfig, SaesModel};
use saec::tensor::Tensor;
use saec::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Wav(_) | Error::MissingPaths(_) => PyOSError::new_err(e.to_string()),
        Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn wave(x: Vec<f64>) -> PyResult<Waveform> {
    Waveform::new(x, SAMPLE_RATE).map_err(py_err)
}

fn spec(x: &[f64]) -> PyResult<ComplexSpectrogram> {
    forward_stft(&wave(x.to_vec())?, &FrameParams::default()).map_err(py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn tensor(r: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let cols = r.first().map_or(0, Vec::len);
    if r.iter().any(|v| v.len() != cols) {
        return Err(PyValueError::new_err("ragged spectrogram rows"));
    }
    Tensor::new(vec![r.len(), cols], r.concat()).map_err(py_err)
}

/// STFT with the library defaults (320-sample Hamming window, hop 160).
#[pyfunction]
fn stft(x: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = spec(&x)?;
    Ok((rows(&s.real), rows(&s.imag)))
}

/// Inverse of `stft`, trimmed or padded to `length` samples.
#[pyfunction]
fn istft(real: Vec<Vec<f64>>, imag: Vec<Vec<f64>>, length: usize) -> PyResult<Vec<f64>> {
    let s = ComplexSpectrogram::new(tensor(real)?, tensor(imag)?, FrameParams::default(), SAMPLE_RATE).map_err(py_err)?;
    Ok(istft_to_len(&s, length).map_err(py_err)?.into_samples())
}

/// Image-method impulse responses `[source][mic]` for the standard
/// loudspeaker pair and microphone pair in a room.
#[pyfunction]
fn receiving_room_rirs(dims: [f64; 3], t60: f64, speaker_offset: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let set = saec::room::simulate_rir(&saec::room::receiving_room(dims, t60, speaker_offset, SAMPLE_RATE)).map_err(py_err)?;
    Ok(set.rirs.iter().map(|row| row.iter().map(|h| h.samples().to_vec()).collect()).collect())
}

/// Schroeder-integral T60 estimate of an impulse response.
#[pyfunction]
fn estimate_t60(h: Vec<f64>) -> PyResult<f64> {
    saec::room::estimate_t60(&wave(h)?).map_err(py_err)
}

/// Deterministic speech-like test signal.
#[pyfunction]
fn speech_like(secs: f64, seed: u64) -> Vec<f64> {
    saec::signals::speech_like(secs, SAMPLE_RATE, seed).into_samples()
}

/// Joint stereo NLMS; returns the error (near-end estimate) signal.
#[pyfunction]
#[pyo3(signature = (y, x1, x2, filter_len = 1600, mu = 0.5, delta = 1e-6))]
fn nlms_cancel(y: Vec<f64>, x1: Vec<f64>, x2: Vec<f64>, filter_len: usize, mu: f64, delta: f64) -> PyResult<Vec<f64>> {
    let state = NlmsState::new(NlmsParams { filter_len, mu, delta }).map_err(py_err)?;
    Ok(nlms(&wave(y)?, &wave(x1)?, &wave(x2)?, state).map_err(py_err)?.0.into_samples())
}

/// Stereo Wiener echo suppression in the STFT domain.
#[pyfunction]
#[pyo3(signature = (y, x1, x2, alpha_psd = 0.92, gain_floor = 0.05))]
fn wiener_suppress(y: Vec<f64>, x1: Vec<f64>, x2: Vec<f64>, alpha_psd: f64, gain_floor: f64) -> PyResult<Vec<f64>> {
    let len = y.len();
    let out = wiener(&spec(&y)?, &spec(&x1)?, &spec(&x2)?, WienerParams { alpha_psd, gain_floor }).map_err(py_err)?;
    Ok(istft_to_len(&out, len).map_err(py_err)?.into_samples())
}

/// `(erle_db, clamped)` of residual `e` against microphone signal `y`.
#[pyfunction]
fn erle(y: Vec<f64>, e: Vec<f64>) -> PyResult<(f64, bool)> {
    let r = saec::metrics::erle(&y, &e).map_err(py_err)?;
    Ok((r.db, r.clamped))
}

#[pyfunction]
fn estoi(reference: Vec<f64>, degraded: Vec<f64>) -> PyResult<f64> {
    saec::metrics::estoi(&wave(reference)?, &wave(degraded)?).map_err(py_err)
}

/// Experiment configuration; mirrors the TOML file used by the CLI.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self { inner: ExperimentConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_toml_str(text).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn bundle_count(&self) -> usize {
        self.inner.grid.bundle_count()
    }
}

/// Synthesises the dataset into `root`; returns the bundle ids.
#[pyfunction]
fn synth(config: &PyConfig, root: PathBuf) -> PyResult<Vec<String>> {
    Ok(harness::cmd_synth(&config.inner, &root).map_err(py_err)?.bundles)
}

/// Runs `algo` over the dataset at `root`; returns the number of files.
#[pyfunction]
#[pyo3(signature = (config, root, algo, out, checkpoint = None))]
fn run(config: &PyConfig, root: PathBuf, algo: &str, out: PathBuf, checkpoint: Option<PathBuf>) -> PyResult<usize> {
    let algo: Algo = algo.parse().map_err(py_err)?;
    Ok(harness::cmd_run(&config.inner, &root, algo, checkpoint.as_deref(), &out).map_err(py_err)?.files)
}

/// Trains on the dataset and writes a checkpoint; returns the per-epoch
/// losses of both stages.
#[pyfunction]
fn train(config: &PyConfig, root: PathBuf, checkpoint: PathBuf) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let r = harness::cmd_train(&config.inner, &root, &checkpoint).map_err(py_err)?;
    Ok((r.stage1_losses, r.stage2_losses))
}

/// Scores every algorithm output; returns per-file rows
/// `(id, algo, erle_db, estoi)`.
#[pyfunction]
fn evaluate(root: PathBuf, enhanced: PathBuf, out: PathBuf) -> PyResult<Vec<(String, String, Option<f64>, Option<f64>)>> {
    let r = harness::cmd_eval(&root, &enhanced, &out).map_err(py_err)?;
    Ok(r.rows.into_iter().map(|m| (m.id, m.algo, m.erle_db, m.estoi)).collect())
}

/// Three-stage echo suppression network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: SaesModel,
}

#[pymethods]
impl PyModel {
    /// Desk-scale network with seeded initial weights.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> PyResult<Self> {
        Ok(Self { inner: SaesModel::init(ModelConfig::toy(), seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: checkpoint::load(dir).map_err(py_err)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, dir).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Near-end estimate; `full=False` stops after the magnitude stage.
    #[pyo3(signature = (mic, far1, far2, full = true))]
    fn enhance(&self, mic: Vec<f64>, far1: Vec<f64>, far2: Vec<f64>, full: bool) -> PyResult<Vec<f64>> {
        let depth = if full { Depth::Full } else { Depth::Coarse };
        let len = mic.len();
        let out = self.inner.enhance(&spec(&mic)?, &spec(&far1)?, &spec(&far2)?, depth).map_err(py_err)?;
        Ok(istft_to_len(&out, len).map_err(py_err)?.into_samples())
    }
}

#[pymodule]
mod saec_py {
    #[pymodule_export]
    use super::{
        erle, estimate_t60, estoi, evaluate, istft, nlms_cancel, receiving_room_rirs, run, speech_like, stft, synth, train,
        wiener_suppress, PyConfig, PyModel,
    };
}
