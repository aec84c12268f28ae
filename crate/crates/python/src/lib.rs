//! Python bindings: model construction, inference, checkpoints, training runs and the
//! numeric building blocks (softmax, cross-entropy, RMSprop, dataset splits).

use std::path::{Path, PathBuf};

use histoconv::data::{
    discover_classes, load_image, resize_bilinear, scan_dataset, split_counts as core_split_counts,
    split_stratified, DatasetManifest, Split, SplitRatios,
};
use histoconv::layers::softmax as core_softmax;
use histoconv::loss::{accuracy as core_accuracy, cross_entropy as core_cross_entropy, EpochMetrics};
use histoconv::model::{load_checkpoint, ModelSpec, ReferenceOptions, Trainer, METRICS_FILE};
use histoconv::optim::{rmsprop_step as core_rmsprop_step, RmspropConfig, RmspropState};
use histoconv::report::{export_filters, plot_curves, CONFIG_FILE};
use histoconv::{Error, Model, Tensor, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Tensor::from_vec([rows.len(), cols], rows.concat()).map_err(to_py)
}

fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let cols = t.shape().last().copied().unwrap_or(0).max(1);
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Row-wise softmax of a list of logit rows.
#[pyfunction]
fn softmax(logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows_of(&core_softmax(&matrix(&logits)?).map_err(to_py)?))
}

/// Mean cross-entropy of probability rows against one-hot target rows.
#[pyfunction]
fn cross_entropy(probs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(core_cross_entropy(&matrix(&probs)?, &matrix(&targets)?)
        .map_err(to_py)?
        .mean_loss)
}

/// Fraction of rows whose arg-max matches the target's arg-max.
#[pyfunction]
fn accuracy(probs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
    core_accuracy(&matrix(&probs)?, &matrix(&targets)?).map_err(to_py)
}

/// One RMSprop update; returns the new parameters and the new squared-gradient average.
#[pyfunction]
#[pyo3(signature = (param, grad, v, lr = 1e-4, rho = 0.9, epsilon = 1e-7))]
fn rmsprop_step(
    param: Vec<f64>,
    grad: Vec<f64>,
    v: Vec<f64>,
    lr: f64,
    rho: f64,
    epsilon: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = RmspropConfig {
        learning_rate: lr,
        rho,
        epsilon,
    };
    cfg.validate().map_err(to_py)?;
    let n = param.len();
    let mut p = Tensor::from_vec([n], param).map_err(to_py)?;
    let g = Tensor::from_vec([grad.len()], grad).map_err(to_py)?;
    let mut state = RmspropState {
        v: Tensor::from_vec([v.len()], v).map_err(to_py)?,
        step: 0,
    };
    core_rmsprop_step(&mut p, &g, &mut state, &cfg).map_err(to_py)?;
    Ok((p.into_data(), state.v.into_data()))
}

/// Per-class `(train, val, test)` sizes for `n` items.
#[pyfunction]
#[pyo3(signature = (n, train = 0.8, val = 0.1, test = 0.1))]
fn split_counts(n: usize, train: f64, val: f64, test: f64) -> PyResult<(usize, usize, usize)> {
    let ratios = SplitRatios::new(train, val, test).map_err(to_py)?;
    Ok(core_split_counts(n, &ratios))
}

fn manifest_for(root: &Path, classes: Option<Vec<String>>, ratios: (f64, f64, f64), seed: u64) -> PyResult<DatasetManifest> {
    let classes = match classes {
        Some(c) => c,
        None => discover_classes(root).map_err(to_py)?,
    };
    let ratios = SplitRatios::new(ratios.0, ratios.1, ratios.2).map_err(to_py)?;
    let entries = scan_dataset(root, &classes).map_err(to_py)?;
    split_stratified(&entries, &classes, ratios, seed).map_err(to_py)
}

/// Stratified split of `root/<class>/*` images; returns `(path, class_index, split)`
/// tuples with split one of `"train"`, `"val"`, `"test"`.
#[pyfunction]
#[pyo3(signature = (root, classes = None, ratios = (0.8, 0.1, 0.1), seed = 42))]
fn split_dataset(
    root: PathBuf,
    classes: Option<Vec<String>>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> PyResult<Vec<(String, usize, String)>> {
    let m = manifest_for(&root, classes, ratios, seed)?;
    Ok(m.entries
        .iter()
        .map(|e| (e.path.display().to_string(), e.class_index, e.split.as_str().to_string()))
        .collect())
}

/// Metrics for one epoch.
#[pyclass(name = "EpochMetrics", get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEpochMetrics {
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    val_loss: f64,
    val_acc: f64,
}

impl From<&EpochMetrics> for PyEpochMetrics {
    fn from(m: &EpochMetrics) -> Self {
        PyEpochMetrics {
            epoch: m.epoch,
            train_loss: m.train_loss,
            train_acc: m.train_acc,
            val_loss: m.val_loss,
            val_acc: m.val_acc,
        }
    }
}

#[pymethods]
impl PyEpochMetrics {
    fn __repr__(&self) -> String {
        format!(
            "EpochMetrics(epoch={}, train_loss={:.4}, train_acc={:.4}, val_loss={:.4}, val_acc={:.4})",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

/// The image classifier.
#[pyclass(name = "Model")]
struct PyModel {
    model: Model,
    classes: Vec<String>,
}

#[pymethods]
impl PyModel {
    /// The reference architecture with freshly initialised weights.
    #[staticmethod]
    #[pyo3(signature = (num_classes, input_size = 150, pool_stride = 1, dropout = 0.5, seed = 42, init_std = 0.05))]
    fn reference(num_classes: usize, input_size: usize, pool_stride: usize, dropout: f64, seed: u64, init_std: f64) -> PyResult<Self> {
        let spec = ModelSpec::reference(
            num_classes,
            ReferenceOptions {
                input_hw: (input_size, input_size),
                pool_stride,
                dropout_rate: dropout,
            },
        )
        .map_err(to_py)?;
        Ok(PyModel {
            model: Model::init(spec, init_std, seed).map_err(to_py)?,
            classes: (0..num_classes).map(|k| k.to_string()).collect(),
        })
    }

    /// Loads the model stored in a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = load_checkpoint(&path).map_err(to_py)?;
        Ok(PyModel {
            model: c.model,
            classes: c.manifest.classes,
        })
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.model.spec().input_shape;
        (h, w, c)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.model.spec().num_classes
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.classes.clone()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.model.params().iter().map(|p| p.len()).sum()
    }

    /// The layer stack in its text form.
    #[getter]
    fn spec(&self) -> String {
        self.model.spec().to_text()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.model.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Class probabilities for `batch` images given as flat NHWC floats in `[0, 1]`.
    fn predict(&self, pixels: Vec<f32>, batch: usize) -> PyResult<Vec<Vec<f64>>> {
        let [h, w, c] = self.model.spec().input_shape;
        let x = Tensor::from_vec([batch, h, w, c], pixels).map_err(to_py)?;
        let p = self.model.predict(&x).map_err(to_py)?.cast::<f64>();
        Ok(rows_of(&p))
    }

    /// Loads, resizes and classifies an image file; returns `(label, probabilities)`.
    fn predict_file(&self, path: PathBuf) -> PyResult<(String, Vec<f64>)> {
        let [h, w, _] = self.model.spec().input_shape;
        let img = load_image(&path).map_err(to_py)?;
        let x = resize_bilinear(&img, h, w)
            .and_then(|t| t.into_reshape([1, h, w, 3]))
            .map_err(to_py)?;
        let p = self.model.predict(&x).map_err(to_py)?.cast::<f64>();
        let k = p.argmax_rows().map_err(to_py)?[0];
        let label = self.classes.get(k).cloned().unwrap_or_else(|| k.to_string());
        Ok((label, p.into_data()))
    }

    /// Writes `filters_conv{k}.png` grids into `out_dir`; returns the paths.
    fn export_filters(&self, out_dir: PathBuf) -> PyResult<Vec<String>> {
        let paths = export_filters(&self.model, &out_dir).map_err(to_py)?;
        Ok(paths.iter().map(|p| p.display().to_string()).collect())
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.input_shape();
        format!("Model(input={h}x{w}x{c}, classes={}, params={})", self.num_classes(), self.num_params())
    }
}

/// Trains on `root/<class>/*` images and writes a full run directory to `out`.
/// `options` holds configuration keys such as `epochs`, `batch_size`, `lr`,
/// `input_size` or `augment`. Returns the trained model and the per-epoch history.
#[pyfunction]
#[pyo3(signature = (root, out, classes = None, ratios = (0.8, 0.1, 0.1), options = None))]
fn train(
    py: Python<'_>,
    root: PathBuf,
    out: PathBuf,
    classes: Option<Vec<String>>,
    ratios: (f64, f64, f64),
    options: Option<Vec<(String, String)>>,
) -> PyResult<(PyModel, Vec<PyEpochMetrics>)> {
    let mut cfg = TrainConfig::default();
    for (k, v) in options.unwrap_or_default() {
        if !cfg.set(&k, &v).map_err(to_py)? {
            return Err(PyValueError::new_err(format!("unknown option {k}")));
        }
    }
    cfg.validate().map_err(to_py)?;
    let manifest = manifest_for(&root, classes, ratios, cfg.seed)?;
    std::fs::create_dir_all(&out).map_err(|e| PyIOError::new_err(format!("{}: {e}", out.display())))?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_text())
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", out.display())))?;
    py.detach(|| {
        manifest.write(&out.join("manifest.tsv"))?;
        let mut trainer = Trainer::new(&manifest, cfg)?.with_run_dir(&out)?;
        let report = trainer.fit()?;
        plot_curves(&out.join(METRICS_FILE), &out)?;
        export_filters(trainer.model(), &out)?;
        let model = PyModel {
            model: trainer.model().clone(),
            classes: manifest.classes.clone(),
        };
        Ok::<_, Error>((model, report.history.iter().map(PyEpochMetrics::from).collect()))
    })
    .map_err(to_py)
}

/// Mean loss and accuracy of a checkpoint on one split of the manifest it was trained with.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, split = "val", batch_size = 32))]
fn evaluate(checkpoint: PathBuf, manifest: PathBuf, split: &str, batch_size: usize) -> PyResult<(f64, f64)> {
    let split = match split {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(PyValueError::new_err(format!("unknown split {other}"))),
    };
    let c = load_checkpoint(&checkpoint).map_err(to_py)?;
    let m = DatasetManifest::read(&manifest).map_err(to_py)?;
    histoconv::model::evaluate(&c.model, &m, split, batch_size, 1).map_err(to_py)
}

/// Runs the command-line interface with `args` (without the program name); returns the
/// exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("histoconv".to_string()).chain(args).collect();
    py.detach(|| histoconv::cli::run_with(argv))
}

#[pymodule]
fn histoconv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyEpochMetrics>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(rmsprop_step, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(split_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
