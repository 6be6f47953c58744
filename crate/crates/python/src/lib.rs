//! Python bindings: `import cci`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cci_core::dsp;
use cci_core::eval::{self, EvalConfig, MetricsReport};
use cci_core::intervene::{InterventionKind, InterventionSpec};
use cci_core::latentviz;
use cci_core::nn::{self, CheckpointManifest, NetConfig};
use cci_core::preprocess::preprocess_records;
use cci_core::records::{self, SignalRecord, SynthConfig, Task};
use cci_core::train::{self, TrainConfig, TrainMode};

fn err(e: cci_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn task(s: &str) -> PyResult<Task> {
    s.parse().map_err(err)
}

#[pyclass(module = "cci", from_py_object)]
#[derive(Clone)]
struct Record {
    inner: SignalRecord,
}

#[pymethods]
impl Record {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    #[getter]
    fn fs_hz(&self) -> f64 {
        self.inner.fs_hz
    }

    #[getter]
    fn samples(&self) -> Vec<f32> {
        self.inner.samples.clone()
    }

    /// `(sample_index, label)` pairs.
    #[getter]
    fn annotations(&self) -> Vec<(usize, String)> {
        self.inner.annotations.iter().map(|a| (a.sample_index, a.label.clone())).collect()
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        records::save_record(&self.inner, dir).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: records::load_record(path).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(id={:?}, task={}, fs_hz={}, samples={}, annotations={})",
            self.inner.id,
            self.inner.task,
            self.inner.fs_hz,
            self.inner.samples.len(),
            self.inner.annotations.len()
        )
    }
}

#[pyclass(module = "cci", from_py_object)]
#[derive(Clone)]
struct Episode {
    inner: records::Episode,
}

#[pymethods]
impl Episode {
    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    #[getter]
    fn signal(&self) -> Vec<f64> {
        self.inner.signal.clone()
    }

    #[getter]
    fn frame_labels(&self) -> Vec<u8> {
        self.inner.frame_labels.clone()
    }

    #[getter]
    fn source_id(&self) -> String {
        self.inner.source_id.clone()
    }

    #[getter]
    fn offset_samples(&self) -> usize {
        self.inner.offset_samples
    }
}

#[pyclass(module = "cci", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: nn::Model,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (task, width_divisor = 1, seed = 0))]
    fn new(task: &str, width_divisor: usize, seed: u64) -> PyResult<Self> {
        let net = NetConfig {
            width_divisor,
            ..Default::default()
        };
        Ok(Self {
            inner: nn::Model::init(self::task(task)?, &net, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: nn::load_checkpoint(path).map_err(err)?.0,
        })
    }

    #[pyo3(signature = (path, seed = 0, mode = "baseline"))]
    fn save(&self, path: &str, seed: u64, mode: &str) -> PyResult<()> {
        let manifest = CheckpointManifest::for_model(&self.inner, seed, "{}", mode);
        nn::save_checkpoint(path, &self.inner, &manifest).map_err(err)
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Latent frames, `frames × 192` nested lists.
    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let z = self.inner.encode(&x).map_err(err)?;
        Ok(z.values.chunks(z.dim).map(<[f64]>::to_vec).collect())
    }

    /// Per-frame class probabilities.
    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let p = self.inner.predict(&x).map_err(err)?;
        Ok(p.values.chunks(p.classes).map(<[f64]>::to_vec).collect())
    }
}

fn report_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tp", m.tp)?;
    d.set_item("fp", m.fp)?;
    d.set_item("fn", m.fn_)?;
    d.set_item("se", m.se)?;
    d.set_item("ppr", m.ppr)?;
    d.set_item("er", m.er)?;
    d.set_item("f1", m.f1)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (task, seed, duration_s = None, fs_hz = None, id = None))]
fn synth(task: &str, seed: u64, duration_s: Option<f64>, fs_hz: Option<f64>, id: Option<String>) -> PyResult<Record> {
    let task = self::task(task)?;
    let mut cfg = match task {
        Task::Qrs => SynthConfig::ecg(),
        Task::Heartsound => SynthConfig::pcg(),
    };
    if let Some(d) = duration_s {
        cfg.duration_s = d;
    }
    if let Some(f) = fs_hz {
        cfg.fs_hz = f;
    }
    if let Some(id) = id {
        cfg.id = id;
    }
    let inner = match task {
        Task::Qrs => records::synth_ecg(&cfg, seed),
        Task::Heartsound => records::synth_pcg(&cfg, seed),
    }
    .map_err(err)?;
    Ok(Record { inner })
}

#[pyfunction]
fn preprocess(records: Vec<Record>) -> PyResult<Vec<Episode>> {
    let recs: Vec<SignalRecord> = records.into_iter().map(|r| r.inner).collect();
    let eps = preprocess_records(&recs, &Default::default()).map_err(err)?;
    Ok(eps.into_iter().map(|inner| Episode { inner }).collect())
}

/// Trains one model on `episodes`; returns the model and its history as CSV.
#[pyfunction]
#[pyo3(signature = (episodes, config_json = None, mode = None, seed = None))]
fn train_model(
    episodes: Vec<Episode>,
    config_json: Option<&str>,
    mode: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(Model, String)> {
    let mut cfg = match config_json {
        Some(text) => TrainConfig::from_json(text).map_err(err)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = match m {
            "baseline" => TrainMode::Baseline,
            "cci" => TrainMode::Cci,
            "augment" => TrainMode::Augment,
            other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
        };
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let eps: Vec<records::Episode> = episodes.into_iter().map(|e| e.inner).collect();
    let (inner, history) = train::train(&cfg, &eps, &[]).map_err(err)?;
    Ok((Model { inner }, history.to_csv()))
}

/// Aggregate detection metrics of `model` over `records`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &Model, records: Vec<Record>) -> PyResult<Bound<'py, PyDict>> {
    let recs: Vec<SignalRecord> = records.into_iter().map(|r| r.inner).collect();
    let out = eval::evaluate_records(&model.inner, &recs, model.inner.task, &EvalConfig::default()).map_err(err)?;
    report_dict(py, &out.aggregate)
}

#[pyfunction]
#[pyo3(signature = (tp, fp, fn_, grace_ms = 150.0))]
fn metrics_from_counts<'py>(py: Python<'py>, tp: u64, fp: u64, fn_: u64, grace_ms: f64) -> PyResult<Bound<'py, PyDict>> {
    report_dict(py, &eval::metrics_from_counts(tp, fp, fn_, grace_ms))
}

/// `kind` is `zero_rhythm` (`ar`) or `invert_morph` (`am`).
#[pyfunction]
fn apply_do(x: Vec<f64>, kind: &str, target_frame: usize, frames_covered: usize, frame_len_samples: usize) -> PyResult<Vec<f64>> {
    let kind: InterventionKind = kind.parse().map_err(err)?;
    let spec = InterventionSpec {
        kind,
        target_frame,
        frames_covered,
        frame_len_samples,
    };
    cci_core::intervene::apply_do(&x, &spec).map_err(err)
}

#[pyfunction]
fn mix_at_snr(signal: Vec<f64>, noise: Vec<f64>, snr_db: f64) -> PyResult<Vec<f64>> {
    dsp::mix_at_snr(&signal, &noise, snr_db).map_err(err)
}

#[pyfunction]
fn scott_bandwidth(points: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let pts: Vec<[f64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
    let h = latentviz::scott_bandwidth(&pts).map_err(err)?;
    Ok((h[0], h[1]))
}

/// Runs the `cci` command line with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    cci_core::cli::run(std::iter::once("cci".to_string()).chain(args))
}

#[pymodule]
fn cci(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Record>()?;
    m.add_class::<Episode>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(apply_do, m)?)?;
    m.add_function(wrap_pyfunction!(mix_at_snr, m)?)?;
    m.add_function(wrap_pyfunction!(scott_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
