//! Optimizer, schedules, loss, augmentation, metrics and the training loop.

pub mod adam;
pub mod augment;
pub mod loss;
pub mod metrics;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use augment::{augment, Augment};
pub use loss::{argmax, cross_entropy};
pub use metrics::{evaluate, mean_iou, shape_iou, Metrics};
pub use schedule::{bn_momentum_at, lr_at};
pub use trainer::{metrics_csv, train, train_to_dir, EpochRecord, TrainConfig, TrainOutcome, METRICS_HEADER};
