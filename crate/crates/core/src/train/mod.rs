//! Losses and the alternating training scheme.

pub mod checks;
mod config;
pub mod losses;
mod trainer;

pub use config::TrainConfig;
pub use losses::*;
pub use trainer::{
    classifier_graph, discriminator_graph, generator_graph, pm_graph, write_log_csv, Batch,
    BatchDraws, EpochLog, GeneratorPlan, GeneratorStats, Noise, Trainer,
};
