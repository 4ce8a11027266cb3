//! Attentive message passing, model assembly and training.

mod batch;
mod metrics;
mod model;
mod train;

pub use batch::Batch;
pub use metrics::{accuracy, roc_auc, Metrics};
pub use model::{
    GnnLayer, Mode, Model, ModelConfig, TaskHead, DROPOUT_CHOICES, HEAD_CHOICES, HIDDEN_CHOICES,
    LAYER_CHOICES,
};
pub use train::{
    evaluate, train, train_prepared, Dataset, LinkSplit, PairSet, RunReport, TrainConfig,
    TrainResult,
};

#[cfg(test)]
mod tests;
