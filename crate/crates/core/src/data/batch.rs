//! Mini-batch assembly: decode, resize, augment (training split only), stack.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::{augment, AugmentConfig};
use super::image::{load_image, resize_bilinear};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng::{augment_rng, stream_rng, Stream};
use crate::tensor::Tensor;

/// Environment variable capping data worker threads.
pub const THREADS_ENV: &str = "HISTOCONV_THREADS";

/// Worker count from `HISTOCONV_THREADS`, defaulting to the available parallelism.
pub fn default_workers() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => cap.min(available),
        _ => available,
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, h, w, 3]` with values in `[0, 1]`.
    pub images: Tensor,
    /// One-hot `[n, classes]` in manifest class order.
    pub labels: Tensor,
    pub paths: Vec<PathBuf>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub fn one_hot(classes: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0f32; classes.len() * num_classes];
    for (row, &k) in classes.iter().enumerate() {
        if k >= num_classes {
            return Err(Error::invalid(format!("class index {k} >= {num_classes}")));
        }
        data[row * num_classes + k] = 1.0;
    }
    Tensor::from_vec([classes.len(), num_classes], data)
}

/// Produces batches for one split of a manifest.
///
/// The training split is reshuffled every epoch from `seed + epoch` and augmented with a
/// per-sample generator keyed by `(seed, epoch, position)`, so the delivered batches do
/// not depend on the number of workers.
pub struct BatchLoader<'a> {
    manifest: &'a DatasetManifest,
    split: Split,
    entries: Vec<&'a ManifestEntry>,
    batch_size: usize,
    seed: u64,
    augment: Option<AugmentConfig>,
    image_hw: (usize, usize),
    pool: rayon::ThreadPool,
}

impl<'a> BatchLoader<'a> {
    pub fn new(
        manifest: &'a DatasetManifest,
        split: Split,
        batch_size: usize,
        seed: u64,
        augment_cfg: AugmentConfig,
        image_hw: (usize, usize),
        workers: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        augment_cfg.validate()?;
        let entries: Vec<_> = manifest.split(split).collect();
        if entries.is_empty() {
            return Err(Error::Dataset(format!("split '{split}' is empty")));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start data workers: {e}")))?;
        Ok(BatchLoader {
            manifest,
            split,
            entries,
            batch_size,
            seed,
            augment: (split == Split::Train && !augment_cfg.is_identity()).then_some(augment_cfg),
            image_hw,
            pool,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_batches(&self) -> usize {
        self.entries.len().div_ceil(self.batch_size)
    }

    /// Visiting order of entry indices for `epoch`.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        if self.split == Split::Train {
            idx.shuffle(&mut stream_rng(
                self.seed.wrapping_add(epoch as u64),
                Stream::Shuffle,
            ));
        }
        idx
    }

    fn load_sample(&self, entry: &ManifestEntry, epoch: usize, position: usize) -> Result<Tensor> {
        let mut img = load_image(&entry.path)?;
        let (h, w) = self.image_hw;
        if img.shape()[..2] != [h, w] {
            img = resize_bilinear(&img, h, w)?;
        }
        if let Some(cfg) = &self.augment {
            img = augment(&img, cfg, &mut augment_rng(self.seed, epoch, position))?;
        }
        Ok(img)
    }

    /// Assembles the batch covering `positions` of the epoch order.
    fn assemble(&self, order: &[usize], start: usize, epoch: usize) -> Result<Batch> {
        let end = (start + self.batch_size).min(order.len());
        let picks: Vec<(usize, &ManifestEntry)> =
            (start..end).map(|pos| (pos, self.entries[order[pos]])).collect();
        let images: Vec<Result<Tensor>> = self.pool.install(|| {
            picks
                .par_iter()
                .map(|&(pos, e)| self.load_sample(e, epoch, pos))
                .collect()
        });
        let (h, w) = self.image_hw;
        let mut data = Vec::with_capacity(picks.len() * h * w * 3);
        for img in images {
            data.extend_from_slice(img?.data());
        }
        let classes: Vec<usize> = picks.iter().map(|(_, e)| e.class_index).collect();
        Ok(Batch {
            images: Tensor::from_vec([picks.len(), h, w, 3], data)?,
            labels: one_hot(&classes, self.manifest.num_classes())?,
            paths: picks.iter().map(|(_, e)| e.path.clone()).collect(),
        })
    }

    /// Iterates the batches of one epoch; the final batch may be partial.
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let order = self.order(epoch);
        (0..order.len())
            .step_by(self.batch_size)
            .map(move |start| self.assemble(&order, start, epoch))
    }
}
