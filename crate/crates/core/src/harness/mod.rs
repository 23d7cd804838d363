//! Configuration, seeding and the collect, train-prior, train-agent and
//! evaluation pipelines, with CSV and JSON outputs.

mod config;
mod pipeline;

pub use config::{conditioning_name, parse_conditioning, parse_seeds, ExperimentConfig, KEYS};
pub use pipeline::{
    collect, dataset_sequences, explore_eval, explore_stats, fit_prior, load_policy, rollouts,
    run_agent, run_stem, save_policy, save_run, write_curve_csv, write_nll_csv, write_psd_csv,
    ExploreStats, FinalMetrics, RunRecord, Sampler, CURVE_HEADER,
};
