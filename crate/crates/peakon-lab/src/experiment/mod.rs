//! Configuration, orchestration and persistence of experiments.

pub mod config;
pub mod output;
pub mod pipelines;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use output::{Assertion, Summary};
pub use pipelines::{
    build_initial, run_check_weights, run_identities, run_ladder, run_simulate, run_train, sweep,
    RunOptions, RunOutput, SweepAxis,
};
