//! Experiment orchestration behind the command-line tool: dataset
//! synthesis, algorithm runs, training and evaluation.

pub mod config;
pub mod eval;
pub mod run;
pub mod synth;
pub mod train;

pub use config::{CorpusConfig, ExperimentConfig, GridConfig, TalkMode, OUTPUT_ROOT_ENV};
pub use eval::{cmd_eval, evaluate, single_talk_mask, summarise, EvalOutput, SummaryRow};
pub use run::{cmd_run, enhance, enhance_bundle, Algo, RunSummary};
pub use synth::{cmd_synth, read_bundle, read_dataset, BundleManifest, DatasetManifest, StoredBundle};
pub use train::{cmd_train, training_example};
