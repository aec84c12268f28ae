pub mod checkpoint;
pub mod network;
pub mod spec;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ManifestRef};
pub use network::{ForwardOutput, Layer, LayerCache, Model, DEFAULT_INIT_STD};
pub use spec::{LayerSpec, ModelSpec, ReferenceOptions};
pub use train::{
    evaluate, evaluate_batches, fit, train_step, StepOutcome, TrainConfig, TrainReport, Trainer,
    METRICS_FILE,
};
