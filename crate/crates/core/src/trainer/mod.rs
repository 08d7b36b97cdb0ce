//! Node-classification training on top of the compound layers.

mod adam;
mod model;
mod run;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{prepare, ModelConfig, NodeClassifier, PreparedGraph, NUM_CLASSES};
pub use run::{
    ablate_fl, evaluate, mean_std, predict_all, predictions_csv, prepare_all, train, AblationRow,
    AblationTable, EpochRecord, FlSetting, Metrics, NodePrediction, RunReport, Splits, TrainConfig,
    TrainOutcome, CSV_HEADER,
};

pub(crate) use model::gradcheck_model;

#[cfg(test)]
mod tests;
