//! Supervised training loop, evaluation, and run-directory bookkeeping.

use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, Checkpoint, ManifestRef};
use super::network::{Model, DEFAULT_INIT_STD};
use super::spec::{ModelSpec, ReferenceOptions};
use crate::data::{default_workers, AugmentConfig, Batch, BatchLoader, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::{correct_count, cross_entropy, softmax_xent_grad, EpochMetrics};
use crate::optim::{attach_states, rmsprop_step, RmspropConfig, RmspropState};
use crate::report::metrics::write_metrics_csv;
use crate::rng::{stream_rng, RngState, Stream};
use crate::tensor::Scalar;

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmspropConfig,
    pub dropout_rate: f64,
    pub seed: u64,
    pub pool_stride: usize,
    pub init_std: f64,
    /// Square input extent images are resized to.
    pub input_size: usize,
    /// Checkpoint cadence in epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub augment: AugmentConfig,
    /// Data-loading threads; has no effect on results.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            optimizer: RmspropConfig::default(),
            dropout_rate: 0.5,
            seed: 42,
            pool_stride: 1,
            init_std: DEFAULT_INIT_STD,
            input_size: 150,
            checkpoint_every: 10,
            augment: AugmentConfig::default(),
            workers: default_workers(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("{key} = {value}: {e}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.pool_stride == 0 {
            return Err(Error::invalid("pool stride must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("init std must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.optimizer.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    pub fn model_options(&self) -> ReferenceOptions {
        ReferenceOptions {
            input_hw: (self.input_size, self.input_size),
            pool_stride: self.pool_stride,
            dropout_rate: self.dropout_rate,
        }
    }

    /// Sets one field from its `key = value` name. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.optimizer.learning_rate = parse(key, value)?,
            "rho" => self.optimizer.rho = parse(key, value)?,
            "epsilon" => self.optimizer.epsilon = parse(key, value)?,
            "dropout" => self.dropout_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "pool_stride" => self.pool_stride = parse(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            "input_size" => self.input_size = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "rotation" => self.augment.rotation_max_deg = parse(key, value)?,
            "shear" => self.augment.shear_max_deg = parse(key, value)?,
            "zoom_min" => self.augment.zoom_range.0 = parse(key, value)?,
            "zoom_max" => self.augment.zoom_range.1 = parse(key, value)?,
            "hflip" => self.augment.hflip = parse(key, value)?,
            "vflip" => self.augment.vflip = parse(key, value)?,
            "augment" => {
                if !parse::<bool>(key, value)? {
                    self.augment = AugmentConfig::disabled();
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field as `key = value` lines; `workers` is omitted because it does not
    /// influence results.
    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let pairs: [(&str, String); 17] = [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.optimizer.learning_rate.to_string()),
            ("rho", self.optimizer.rho.to_string()),
            ("epsilon", self.optimizer.epsilon.to_string()),
            ("dropout", self.dropout_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("pool_stride", self.pool_stride.to_string()),
            ("init_std", self.init_std.to_string()),
            ("input_size", self.input_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("rotation", a.rotation_max_deg.to_string()),
            ("shear", a.shear_max_deg.to_string()),
            ("zoom_min", a.zoom_range.0.to_string()),
            ("zoom_max", a.zoom_range.1.to_string()),
            ("hflip", a.hflip.to_string()),
            ("vflip", a.vflip.to_string()),
        ];
        pairs
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", no + 1)))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::invalid(format!(
                    "config line {}: unknown key '{}'",
                    no + 1,
                    k.trim()
                )));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Mean cross-entropy of the batch before the update.
    pub loss: f64,
    pub accuracy: f64,
}

/// One forward pass, one fused-gradient backward pass, and one RMSprop update per
/// parameter tensor.
pub fn train_step<S: Scalar, R: Rng + ?Sized>(
    model: &mut Model<S>,
    states: &mut [RmspropState<S>],
    images: &crate::tensor::Tensor<S>,
    labels: &crate::tensor::Tensor<S>,
    optimizer: &RmspropConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    if labels.shape().get(1) != Some(&model.spec().num_classes) {
        return Err(Error::ShapeMismatch {
            op: "train_step labels",
            left: labels.shape().to_vec(),
            right: vec![images.shape()[0], model.spec().num_classes],
        });
    }
    let out = model.forward(images, Mode::Train, rng)?;
    let loss = cross_entropy(&out.probs, labels)?;
    let correct = correct_count(&out.probs, labels)?;
    let d_logits = softmax_xent_grad(&out.logits, labels)?;
    let grads = model.backward(out.caches.as_deref().expect("train mode"), &d_logits)?;
    let params = model.params_mut();
    if states.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} optimizer states for {} parameters",
            states.len(),
            params.len()
        )));
    }
    for ((p, g), s) in params.into_iter().zip(&grads).zip(states.iter_mut()) {
        rmsprop_step(p, g, s, optimizer)?;
    }
    Ok(StepOutcome {
        loss: loss.mean_loss,
        accuracy: correct as f64 / loss.batch_size as f64,
    })
}

/// Eval-mode mean loss and accuracy over `batches`, each sample weighted equally.
pub fn evaluate_batches<I>(model: &Model, batches: I) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let (mut loss_sum, mut correct, mut total) = (0.0f64, 0usize, 0usize);
    for batch in batches {
        let batch = batch?;
        let probs = model.predict(&batch.images)?;
        let loss = cross_entropy(&probs, &batch.labels)?;
        loss_sum += loss.mean_loss * loss.batch_size as f64;
        correct += correct_count(&probs, &batch.labels)?;
        total += loss.batch_size;
    }
    if total == 0 {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    Ok((loss_sum / total as f64, correct as f64 / total as f64))
}

/// Evaluates every entry of `split` exactly once, in manifest order.
pub fn evaluate(
    model: &Model,
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    workers: usize,
) -> Result<(f64, f64)> {
    let [h, w, _] = model.spec().input_shape;
    let loader = BatchLoader::new(
        manifest,
        split,
        batch_size,
        0,
        AugmentConfig::disabled(),
        (h, w),
        workers,
    )?;
    evaluate_batches(model, loader.epoch(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Checkpoints written during the run, in order.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }
}

/// Resumable training state for one run.
pub struct Trainer<'a> {
    manifest: &'a DatasetManifest,
    cfg: TrainConfig,
    model: Model,
    states: Vec<RmspropState>,
    dropout_rng: ChaCha8Rng,
    history: Vec<EpochMetrics>,
    run_dir: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Fresh run: builds the reference model for the manifest's class count.
    pub fn new(manifest: &'a DatasetManifest, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = ModelSpec::reference(manifest.num_classes(), cfg.model_options())?;
        let model = Model::init(spec, cfg.init_std, cfg.seed)?;
        Self::with_model(manifest, cfg, model)
    }

    /// Fresh run with a caller-provided model.
    pub fn with_model(manifest: &'a DatasetManifest, cfg: TrainConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        if model.spec().num_classes != manifest.num_classes() {
            return Err(Error::invalid(format!(
                "model has {} classes, manifest has {}",
                model.spec().num_classes,
                manifest.num_classes()
            )));
        }
        let states = attach_states(&model.params().into_iter().cloned().collect::<Vec<_>>());
        Ok(Trainer {
            manifest,
            dropout_rng: stream_rng(cfg.seed, Stream::Dropout),
            cfg,
            model,
            states,
            history: Vec::new(),
            run_dir: None,
            checkpoints: Vec::new(),
        })
    }

    /// Continues a run from a checkpoint. `cfg.epochs` is the total target.
    pub fn resume(manifest: &'a DatasetManifest, cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.manifest.classes != manifest.classes {
            return Err(Error::invalid(format!(
                "checkpoint classes {:?} differ from manifest classes {:?}",
                ckpt.manifest.classes, manifest.classes
            )));
        }
        if ckpt.history.len() as u64 != ckpt.epoch {
            return Err(Error::invalid("checkpoint history does not match its epoch"));
        }
        let states = if ckpt.opt_states.is_empty() {
            attach_states(&ckpt.model.params().into_iter().cloned().collect::<Vec<_>>())
        } else {
            ckpt.opt_states
        };
        Ok(Trainer {
            manifest,
            dropout_rng: ckpt.rng.restore(),
            cfg,
            model: ckpt.model,
            states,
            history: ckpt.history,
            run_dir: None,
            checkpoints: Vec::new(),
        })
    }

    /// Writes metrics and checkpoints under `dir` as training proceeds.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.run_dir = Some(dir);
        Ok(self)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.history.len() as u64,
            model: self.model.clone(),
            opt_states: self.states.clone(),
            manifest: ManifestRef {
                seed: self.manifest.seed,
                ratios: self.manifest.ratios,
                classes: self.manifest.classes.clone(),
            },
            rng: RngState::capture(&self.dropout_rng),
            config: self.cfg.to_text(),
            history: self.history.clone(),
        }
    }

    fn image_hw(&self) -> (usize, usize) {
        let [h, w, _] = self.model.spec().input_shape;
        (h, w)
    }

    /// Trains one more epoch, then evaluates the validation split.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.history.len();
        let loader = BatchLoader::new(
            self.manifest,
            Split::Train,
            self.cfg.batch_size,
            self.cfg.seed,
            self.cfg.augment,
            self.image_hw(),
            self.cfg.workers,
        )?;
        let (mut loss_sum, mut acc_sum, mut seen) = (0.0f64, 0.0f64, 0usize);
        for batch in loader.epoch(epoch) {
            let batch = batch?;
            let n = batch.len();
            let step = train_step(
                &mut self.model,
                &mut self.states,
                &batch.images,
                &batch.labels,
                &self.cfg.optimizer,
                &mut self.dropout_rng,
            )?;
            loss_sum += step.loss * n as f64;
            acc_sum += step.accuracy * n as f64;
            seen += n;
        }
        let (val_loss, val_acc) = evaluate(
            &self.model,
            self.manifest,
            Split::Val,
            self.cfg.batch_size,
            self.cfg.workers,
        )?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: acc_sum / seen as f64,
            val_loss,
            val_acc,
        };
        info!(
            "epoch {}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
        self.history.push(m);
        if let Some(dir) = self.run_dir.clone() {
            write_metrics_csv(&dir.join(METRICS_FILE), &self.history)?;
            let k = self.cfg.checkpoint_every;
            let done = self.history.len();
            if (k > 0 && done.is_multiple_of(k)) || done == self.cfg.epochs {
                self.save_to(&dir)?;
            }
        }
        Ok(m)
    }

    fn save_to(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("ckpt_ep{}.hcv", self.history.len()));
        save_checkpoint(&path, &self.checkpoint())?;
        self.checkpoints.push(path);
        Ok(())
    }

    /// Trains until `cfg.epochs` epochs have completed in total.
    pub fn fit(&mut self) -> Result<TrainReport> {
        if self.manifest.split_len(Split::Val) == 0 {
            return Err(Error::Dataset("validation split is empty".into()));
        }
        while self.history.len() < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(TrainReport {
            history: self.history.clone(),
            checkpoints: self.checkpoints.clone(),
        })
    }
}

/// Builds the reference model for `manifest` and trains it for `cfg.epochs` epochs.
pub fn fit(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let mut t = Trainer::new(manifest, cfg.clone())?;
    let report = t.fit()?;
    Ok((t.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Padding;
    use crate::model::spec::LayerSpec;
    use crate::tensor::Tensor;

    fn tiny_model(seed: u64) -> Model<f64> {
        let spec = ModelSpec {
            input_shape: [4, 4, 1],
            num_classes: 2,
            layers: vec![
                LayerSpec::Conv {
                    filters: 3,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    padding: Padding::Same,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 2 },
                LayerSpec::Softmax,
            ],
        };
        Model::init(spec, 0.3, seed).unwrap()
    }

    fn sample(seed: u64, n: usize) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = stream_rng(seed, Stream::Split);
        let x = (0..n * 16).map(|_| rng.random::<f64>()).collect();
        let mut y = vec![0.0; n * 2];
        for i in 0..n {
            y[i * 2 + rng.random_range(0..2)] = 1.0;
        }
        (
            Tensor::from_vec([n, 4, 4, 1], x).unwrap(),
            Tensor::from_vec([n, 2], y).unwrap(),
        )
    }

    fn states(m: &Model<f64>) -> Vec<RmspropState<f64>> {
        attach_states(&m.params().into_iter().cloned().collect::<Vec<_>>())
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut m = tiny_model(1);
        let before: Vec<_> = m.params().into_iter().cloned().collect();
        let mut s = states(&m);
        let (x, y) = sample(1, 3);
        let cfg = RmspropConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let out = train_step(&mut m, &mut s, &x, &y, &cfg, &mut stream_rng(0, Stream::Dropout)).unwrap();
        assert!(out.loss > 0.0);
        assert_eq!(m.params().into_iter().cloned().collect::<Vec<_>>(), before);
    }

    #[test]
    fn single_sample_memorization() {
        let mut m = tiny_model(2);
        let mut s = states(&m);
        let (x, y) = sample(2, 1);
        let cfg = RmspropConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut rng = stream_rng(0, Stream::Dropout);
        for _ in 0..200 {
            train_step(&mut m, &mut s, &x, &y, &cfg, &mut rng).unwrap();
        }
        let loss = cross_entropy(&m.predict(&x).unwrap(), &y).unwrap().mean_loss;
        assert!(loss < 0.01, "{loss}");
    }

    #[test]
    fn descent_on_most_random_cases() {
        let mut down = 0;
        let cases = 50;
        for seed in 0..cases {
            let mut m = tiny_model(100 + seed);
            let mut s = states(&m);
            let (x, y) = sample(seed, 4);
            let before = cross_entropy(&m.predict(&x).unwrap(), &y).unwrap().mean_loss;
            train_step(&mut m, &mut s, &x, &y, &RmspropConfig::default(), &mut stream_rng(0, Stream::Dropout))
                .unwrap();
            let after = cross_entropy(&m.predict(&x).unwrap(), &y).unwrap().mean_loss;
            if after < before {
                down += 1;
            }
        }
        assert!(down * 10 >= cases * 9, "{down}/{cases}");
    }

    #[test]
    fn label_width_checked() {
        let mut m = tiny_model(1);
        let mut s = states(&m);
        let (x, _) = sample(1, 2);
        let y = Tensor::<f64>::zeros([2, 3]).unwrap();
        assert!(train_step(&mut m, &mut s, &x, &y, &RmspropConfig::default(), &mut stream_rng(0, Stream::Dropout)).is_err());
    }

    #[test]
    fn config_validation_and_text() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig {
            epochs: 7,
            seed: 3,
            ..Default::default()
        };
        cfg.optimizer.learning_rate = 3e-4;
        cfg.augment.hflip = false;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.optimizer.learning_rate, 3e-4);
        assert!(TrainConfig::from_text("nonsense = 1").is_err());
        assert!(TrainConfig::from_text("epochs: 1").is_err());
        assert!(TrainConfig::from_text("epochs = x").is_err());
    }
}
