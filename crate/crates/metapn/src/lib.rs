//! Graph bundles, synthetic fixtures, checkpoints and the experiment runner
//! around [`metapn_core`].

pub mod bench;
pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod runlog;
pub mod sbm;

pub use bench::{ablate_k, run_experiment, run_lp_baseline, run_static_lp, RunResult};
pub use bundle::{load_bundle, store_bundle, GraphBundle};
pub use config::{ExperimentConfig, Method};
pub use sbm::{generate_sbm, SbmSpec};
