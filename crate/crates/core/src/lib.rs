//! Thematic-fit estimation with prompted language models.
//!
//! Loads psycholinguistic norm datasets, renders prompt chains for eight
//! experiment configurations, runs them through a caching gateway and
//! scores the model against human ratings with Spearman's rho.

pub mod cli;
pub mod codec;
pub mod context;
pub mod gateway;
pub mod harness;
pub mod norms;
pub mod prompt;
pub mod stats;

pub use codec::{parse_score, FitCategory, ScoreOutcome, ScoreSource};
pub use gateway::{Gateway, GatewayMode, Message, ModelParams};
pub use harness::{run_experiment, run_grid, sweep_grid, RunOptions, RunOutput};
pub use norms::{load_dataset, preprocess, ColumnSpec, Dataset, NormItem, Role};
pub use prompt::{ExperimentConfig, TemplateSet};
pub use stats::{spearman, CorrelationResult};
