//! Command-line front end: run configuration, model files and subcommands.

pub mod artifact;
pub mod commands;
pub mod config;

pub use artifact::ModelArtifact;
pub use commands::{
    cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, load_data, predict_rows,
    CmdResult, PredictSummary, StageError, TrainOutcome, MODEL_FILE, TRAIN_STAGES,
};
pub use config::RunConfig;
