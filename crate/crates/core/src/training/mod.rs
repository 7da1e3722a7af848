//! ACR (squared error) and CCR (RankNet) training with Adam.

pub mod adam;
pub mod experiment;
pub mod loss;
pub mod trainer;

pub use crate::features::FeatureStore;
pub use adam::{adam_update, AdamConfig, AdamState};
pub use experiment::{
    run_experiment, CellRun, CellSummary, ExperimentConfig, ExperimentResult, ModelSpec, TrainMode, DEFAULT_SIZES,
    DEFAULT_TEST_PAIRS,
};
pub use loss::{mse_loss, ranknet_loss, ranknet_pair_loss, ranknet_probability};
pub use trainer::{no_eval, train_acr, train_ccr, EpochReport, EvalScores, Hyperparams, PairEvaluator};
