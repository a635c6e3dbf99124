//! From-scratch three-stage neural echo suppressor with manual gradients.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod network;
pub mod optim;
pub mod train;

pub use model::{loss_and_grad, loss_stage1, loss_stage2, Depth, ModelConfig, Objective, SaesModel, TrainingExample};
pub use network::{CrnStage, StageConfig};
pub use optim::{Adam, AdamConfig};
pub use train::{train_two_stage, TrainConfig, TrainReport};
