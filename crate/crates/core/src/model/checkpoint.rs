//! Versioned little-endian checkpoint container.
//!
//! Layout, in order: magic `HCV1`, `u32` format version, `u64` completed epochs, model
//! spec text, manifest reference (seed, three split ratios, class names), dropout
//! generator state, training-config text, per-epoch metrics, named `f32` parameter
//! tensors, then one optimizer state per parameter. Strings and sequences carry a `u32`
//! length prefix; tensors carry their rank and `u64` extents.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::network::Model;
use super::spec::ModelSpec;
use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::loss::EpochMetrics;
use crate::optim::RmspropState;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HCV1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated while reading {0}")]
    Truncated(&'static str),
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("malformed {0}")]
    Malformed(String),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// Identifies the dataset split a run was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRef {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: u64,
    pub model: Model,
    pub opt_states: Vec<RmspropState>,
    pub manifest: ManifestRef,
    pub rng: RngState,
    /// `key = value` lines of the training configuration.
    pub config: String,
    pub history: Vec<EpochMetrics>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section length fits in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.len(t.rank());
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self, what: &'static str) -> std::result::Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &'static str) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn len(&mut self, what: &'static str) -> std::result::Result<usize, CheckpointError> {
        Ok(self.u32(what)? as usize)
    }
    fn str(&mut self, what: &'static str) -> std::result::Result<String, CheckpointError> {
        let n = self.len(what)?;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("{what}: not UTF-8")))
    }
    fn tensor(&mut self, what: &'static str) -> std::result::Result<Tensor, CheckpointError> {
        let rank = self.len(what)?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u64(what)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Malformed(format!("{what}: extents overflow")))?;
        let data = self
            .take(n, what)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(self.epoch);
        w.str(&self.model.spec().to_text());

        w.u64(self.manifest.seed);
        let r = &self.manifest.ratios;
        for v in [r.train, r.val, r.test] {
            w.f64(v);
        }
        w.len(self.manifest.classes.len());
        for c in &self.manifest.classes {
            w.str(c);
        }

        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        w.str(&self.config);
        w.len(self.history.len());
        for m in &self.history {
            w.u64(m.epoch as u64);
            for v in [m.train_loss, m.train_acc, m.val_loss, m.val_acc] {
                w.f64(v);
            }
        }

        let names = self.model.spec().param_names();
        let params = self.model.params();
        w.len(params.len());
        for (name, t) in names.iter().zip(&params) {
            w.str(name);
            w.tensor(t);
        }
        w.len(self.opt_states.len());
        for s in &self.opt_states {
            w.u64(s.step);
            w.tensor(&s.v);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.array::<4>("magic")?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let epoch = r.u64("epoch")?;
        let spec = ModelSpec::from_text(&r.str("model spec")?)
            .map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;

        let seed = r.u64("manifest seed")?;
        let ratios = SplitRatios {
            train: r.f64("ratios")?,
            val: r.f64("ratios")?,
            test: r.f64("ratios")?,
        };
        let n_classes = r.len("class list")?;
        let classes = (0..n_classes)
            .map(|_| r.str("class name"))
            .collect::<std::result::Result<Vec<_>, _>>()?;

        let rng = RngState {
            seed: r.array("rng seed")?,
            stream: r.u64("rng stream")?,
            word_pos: u128::from_le_bytes(r.array("rng position")?),
        };

        let config = r.str("config")?;
        let n_hist = r.len("history")?;
        let mut history = Vec::with_capacity(n_hist.min(4096));
        for _ in 0..n_hist {
            history.push(EpochMetrics {
                epoch: r.u64("history")? as usize,
                train_loss: r.f64("history")?,
                train_acc: r.f64("history")?,
                val_loss: r.f64("history")?,
                val_acc: r.f64("history")?,
            });
        }

        let layout = spec
            .param_layout()
            .map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
        let names = spec.param_names();
        let found = r.len("tensor count")?;
        if found != layout.len() {
            return Err(CheckpointError::TensorCount {
                expected: layout.len(),
                found,
            });
        }
        let mut params = Vec::with_capacity(found);
        for (name, (_, shape)) in names.iter().zip(&layout) {
            let stored = r.str("tensor name")?;
            if &stored != name {
                return Err(CheckpointError::Malformed(format!(
                    "tensor name '{stored}', expected '{name}'"
                )));
            }
            let t = r.tensor("tensor data")?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::TensorShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            params.push(t);
        }
        let n_states = r.len("optimizer state count")?;
        if n_states != 0 && n_states != params.len() {
            return Err(CheckpointError::TensorCount {
                expected: params.len(),
                found: n_states,
            });
        }
        let mut opt_states = Vec::with_capacity(n_states);
        for (name, p) in names.iter().zip(&params).take(n_states) {
            let step = r.u64("optimizer step")?;
            let v = r.tensor("optimizer state")?;
            if v.shape() != p.shape() {
                return Err(CheckpointError::TensorShape {
                    name: format!("{name}.rms"),
                    expected: p.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
            opt_states.push(RmspropState { v, step });
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Trailing(buf.len() - r.pos));
        }
        let model = Model::from_params(spec, params)
            .map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
        Ok(Checkpoint {
            epoch,
            model,
            opt_states,
            manifest: ManifestRef {
                seed,
                ratios,
                classes,
            },
            rng,
            config,
            history,
        })
    }
}

/// Writes through a sibling temporary file and renames it into place, so a failed
/// write never leaves a partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::ReferenceOptions;
    use crate::optim::attach_states;
    use crate::rng::{stream_rng, Stream};

    fn sample() -> Checkpoint {
        let opts = ReferenceOptions {
            input_hw: (24, 24),
            ..Default::default()
        };
        let model: Model = Model::init(ModelSpec::reference(3, opts).unwrap(), 0.05, 4).unwrap();
        let mut opt_states = attach_states(&model.params().into_iter().cloned().collect::<Vec<_>>());
        opt_states[0].step = 7;
        opt_states[0].v.data_mut()[3] = 0.25;
        Checkpoint {
            epoch: 3,
            model,
            opt_states,
            manifest: ManifestRef {
                seed: 42,
                ratios: SplitRatios::default(),
                classes: vec!["lung_aca".into(), "lung_n".into(), "lung_scc".into()],
            },
            rng: RngState::capture(&stream_rng(1, Stream::Dropout)),
            config: "epochs = 3\n".into(),
            history: vec![EpochMetrics {
                epoch: 1,
                train_loss: 0.1 + 0.2,
                train_acc: 0.5,
                val_loss: f64::MIN_POSITIVE,
                val_acc: 1.0 / 3.0,
            }],
        }
    }

    #[test]
    fn round_trip_is_canonical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.model.params(), c.model.params());
        assert_eq!(back.history, c.history);
        assert_eq!(back.rng, c.rng);
        assert_eq!(back.opt_states[0].step, 7);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(
            Checkpoint::from_bytes(&bad).unwrap_err(),
            CheckpointError::UnsupportedVersion(9)
        );

        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated(_))
        ));

        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(Checkpoint::from_bytes(&bad).unwrap_err(), CheckpointError::Trailing(1));
    }

    #[test]
    fn shape_and_count_mismatch() {
        let c = sample();
        let other_opts = ReferenceOptions {
            input_hw: (32, 32),
            ..Default::default()
        };
        // splice a different-size model's tensors under the first model's spec
        let other: Model = Model::init(ModelSpec::reference(3, other_opts).unwrap(), 0.05, 4).unwrap();
        let mut swapped = c.clone();
        swapped.model = other;
        let mut bytes = swapped.to_bytes();
        let spec_a = c.model.spec().to_text();
        let spec_b = swapped.model.spec().to_text();
        assert_eq!(spec_a.len(), spec_b.len());
        let at = bytes
            .windows(spec_b.len())
            .position(|w| w == spec_b.as_bytes())
            .unwrap();
        bytes[at..at + spec_a.len()].copy_from_slice(spec_a.as_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::TensorShape { .. })
        ));

        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(0);
        w.str(&spec_a);
        w.u64(0);
        for v in [0.8, 0.1, 0.1] {
            w.f64(v);
        }
        w.len(0);
        w.0.extend_from_slice(&[0u8; 32 + 8 + 16]);
        w.str("");
        w.len(0);
        w.len(3);
        assert_eq!(
            Checkpoint::from_bytes(&w.0).unwrap_err(),
            CheckpointError::TensorCount {
                expected: 10,
                found: 3
            }
        );
    }

    #[test]
    fn atomic_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hcv");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), c.to_bytes());
        assert!(!dir.path().join("a.hcv.tmp").exists());
        let missing = dir.path().join("nope").join("b.hcv");
        assert!(save_checkpoint(&missing, &c).is_err());
        assert!(!dir.path().join("nope").exists());
    }
}
