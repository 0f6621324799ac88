//! Double reinforcement learning for off-policy evaluation.
//!
//! The crate estimates the value `ρ = E_{π^e}[Σ_t r_t]` of a target policy from
//! trajectories logged under a known behavior policy, over a finite horizon.
//!
//! - [`data`], [`policy`], [`ratios`], [`folds`]: trajectories, policies, density ratios and cross-fitting folds.
//! - [`envs`]: simulators (a Gaussian MDP, Cliff Walking, Mountain Car) and q-learning.
//! - [`nuisance`]: backward least-squares q-functions and marginal ratio estimators.
//! - [`estimators`]: IS, DM, MIS and the cross-fitted DRL estimators.
//! - [`oracle`]: exact dynamic programming, efficient influence functions and bounds on tabular MDPs.
//! - [`bench`]: configuration-driven Monte Carlo experiments with CSV output.

pub mod bench;
pub mod data;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod fastmath;
pub mod features;
pub mod folds;
mod linalg;
pub mod nuisance;
pub mod oracle;
pub mod policy;
pub mod ratios;
pub mod rng;

pub use data::{Dataset, SpaceSpec, StateKind, StateRef, States, Trajectory};
pub use error::{Error, Result};
pub use folds::{assign_folds, FoldAssignment};
pub use policy::Policy;
pub use ratios::{eta, lambda_path, v_from_q, Prepared, QFunction};
