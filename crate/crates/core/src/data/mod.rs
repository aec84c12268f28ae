//! Dataset discovery, splitting, decoding, augmentation and batching.

pub mod augment;
pub mod batch;
pub mod image;
pub mod manifest;

pub use augment::{augment, hflip, vflip, warp_affine, Affine, AugmentConfig};
pub use batch::{default_workers, one_hot, Batch, BatchLoader, THREADS_ENV};
pub use image::{load_image, resize_bilinear};
pub use manifest::{
    discover_classes, scan_dataset, split_counts, split_stratified, DatasetManifest,
    ManifestEntry, Split, SplitRatios,
};
