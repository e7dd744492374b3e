//! Minimal deterministic neural engine.

pub mod checkpoint;
pub mod layer;
pub mod loss;
pub mod model;
pub mod network;
pub mod train;

pub use layer::{ConvGeometry, LayerKind, LayerSpec};
pub use loss::{loss_mse, mse_grad};
pub use model::{build_autoencoder, AutoencoderConfig, Forward, Gradients, Graph, ModelParams, ParamSlot, Side, Topology};
pub use network::{Network, NetworkGrads, Trace};
pub use train::{eval_mse, pretrain, reconstruction_step, sgd_step, sgd_update, TrainConfig, TrainRun};
