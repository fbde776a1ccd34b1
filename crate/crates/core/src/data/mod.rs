//! Dataset parsing, splitting, normalization and batching.

pub mod cifar;
pub mod dataset;
pub mod idx;
pub mod synthetic;

pub use cifar::parse_cifar10;
pub use dataset::{
    augment_crop_flip, load_cifar10, load_mnist, sequential_batches, shuffled_batches, split_train_valid, Dataset, Normalizer, Split,
};
pub use idx::parse_idx;
pub use synthetic::planted_task;
