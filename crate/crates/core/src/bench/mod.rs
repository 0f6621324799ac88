//! Configuration-driven Monte Carlo experiments: build an environment and
//! policy pair, draw independent datasets at each sample size, run the
//! configured estimators and report RMSE against the true value as CSV.
//!
//! Replication `r` at size `n` draws from a seed derived from
//! `(master seed, n, r)`, so results do not depend on scheduling or thread count.

mod config;
mod csv_out;
mod problem;
mod run;
mod truth;

pub use config::{
    EnvConfig, ExperimentConfig, FeatureConfig, MuConfig, PiDSource, PolicyConfig, QConfig, SettingConfig,
    TruthConfig,
};
pub use csv_out::{emit_csv, load_csv, read_csv, round6, write_csv, HEADER};
pub use problem::{build_learners, build_pi_d, build_policies, BuiltEnv, SettingLearners};
pub use run::{check_failure_budget, evaluate_dataset, replication_seed, run_experiment, run_problem, Problem, ResultRow};
pub use truth::{compute_true_value, fnv1a, true_value, truth_key, TrueValue};

pub(crate) use crate::with_env;
