//! Quantizable layers, networks, the model zoo, training and checkpoints.

pub mod checkpoint;
pub mod layer;
pub mod network;
pub mod optim;
pub mod train;
pub mod zoo;

pub use checkpoint::Checkpoint;
pub use layer::{BatchNorm, LayerKind, LayerSpec, LayerVars, Precision, QuantLayer};
pub use network::{Bindings, Network, NormUpdate, Stage};
pub use optim::{cosine_lr, Sgd};
pub use train::{evaluate, train, weight_step, Metrics, TrainConfig};
pub use zoo::{build_mlp, build_mnist_dwsep, build_vgg_small, Architecture};
