//! Policy-value estimators: importance sampling, the direct method, marginalized
//! importance sampling, and the cross-fitted double reinforcement learning
//! estimators with their no-split variants.
//!
//! All DR-type estimators share the per-trajectory plug-in
//! `Σ_t [ρ_t·(r_t − q̂_t(s_t, a_t)) + ρ_{t−1}·v̂_t(s_t)]` with `ρ_{−1} = 1`, where
//! `ρ_t` is `λ_t` (M1) or `μ_t` (M2).

mod learners;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use learners::{
    default_ridge, Bandwidth, FixedMu, FixedQ, HistogramWLearner, KernelWLearner, KnownLambda,
    LinearQLearner, LsMuLearner, NuisanceFit, QLearner, RatioLearner,
};

use crate::data::Dataset;
use crate::envs::mean_and_se;
use crate::error::{Error, Result};
use crate::folds::{assign_folds, FoldAssignment};
use crate::nuisance::{AlongQ, RatioAlong, RatioModel};
use crate::policy::Policy;
use crate::ratios::{v_from_q, Prepared, QFunction};
use crate::rng;

/// Point estimate of `ρ^{π_e}` with its plug-in standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueEstimate {
    pub rho_hat: f64,
    /// Sample SD of the per-trajectory contributions over `√n`.
    pub std_error: f64,
    pub n: usize,
    pub estimator_name: String,
}

impl PolicyValueEstimate {
    pub fn from_contributions(name: &str, contributions: &[f64]) -> Result<Self> {
        let (rho_hat, std_error) = mean_and_se(contributions);
        if !rho_hat.is_finite() || !std_error.is_finite() {
            return Err(Error::invalid(format!("{name}: non-finite estimate")));
        }
        Ok(PolicyValueEstimate {
            rho_hat,
            std_error,
            n: contributions.len(),
            estimator_name: name.to_string(),
        })
    }
}

/// Estimator names accepted in configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Is,
    Dm,
    Mis,
    DrlM1,
    DrlM2,
    DrAdaptiveM1,
    DrAdaptiveM2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Is,
        EstimatorKind::Dm,
        EstimatorKind::Mis,
        EstimatorKind::DrlM1,
        EstimatorKind::DrlM2,
        EstimatorKind::DrAdaptiveM1,
        EstimatorKind::DrAdaptiveM2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Is => "is",
            EstimatorKind::Dm => "dm",
            EstimatorKind::Mis => "mis",
            EstimatorKind::DrlM1 => "drl_m1",
            EstimatorKind::DrlM2 => "drl_m2",
            EstimatorKind::DrAdaptiveM1 => "dr_adaptive_m1",
            EstimatorKind::DrAdaptiveM2 => "dr_adaptive_m2",
        }
    }

    pub fn needs_q(self) -> bool {
        !matches!(self, EstimatorKind::Is | EstimatorKind::Mis)
    }

    pub fn needs_mu(self) -> bool {
        matches!(
            self,
            EstimatorKind::Mis | EstimatorKind::DrlM2 | EstimatorKind::DrAdaptiveM2
        )
    }

    pub fn needs_folds(self) -> bool {
        matches!(self, EstimatorKind::DrlM1 | EstimatorKind::DrlM2)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown estimator {s:?}")))
    }
}

// ── Simple estimators ──────────────────────────────────────────────────────

/// Which importance-sampling form to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsForm {
    /// `E_n[Σ_t λ_t r_t]`.
    #[default]
    PerDecision,
    /// `E_n[λ_T Σ_t r_t]`, the higher-variance trajectory form.
    Trajectory,
}

/// `E_n[Σ_t λ_t r_t]`.
pub fn is_estimate(data: &Dataset, behavior: &Policy, target: &Policy) -> Result<PolicyValueEstimate> {
    is_estimate_prepared(&Prepared::new(data, behavior, target)?, IsForm::PerDecision)
}

pub fn is_estimate_with(data: &Dataset, behavior: &Policy, target: &Policy, form: IsForm) -> Result<PolicyValueEstimate> {
    is_estimate_prepared(&Prepared::new(data, behavior, target)?, form)
}

pub fn is_estimate_prepared(prep: &Prepared<'_>, form: IsForm) -> Result<PolicyValueEstimate> {
    let steps = prep.steps();
    let contributions: Vec<f64> = (0..prep.n())
        .map(|i| {
            let traj = prep.data.trajectory(i);
            match form {
                IsForm::PerDecision => (0..steps).map(|t| prep.lambda(i, t) * traj.reward(t)).sum(),
                IsForm::Trajectory => prep.lambda(i, steps - 1) * traj.total_reward(),
            }
        })
        .collect();
    PolicyValueEstimate::from_contributions("is", &contributions)
}

/// `E_n[Σ_a π^e(a|s_0) q̂_0(s_0, a)]`.
pub fn dm_estimate<Q: QFunction + ?Sized>(data: &Dataset, q0: &Q, target: &Policy) -> Result<PolicyValueEstimate> {
    let contributions: Vec<f64> = data
        .trajectories()
        .iter()
        .map(|traj| v_from_q(q0, target, 0, traj.state(0)))
        .collect();
    PolicyValueEstimate::from_contributions("dm", &contributions)
}

/// DM from along-row predictions (`v̂_0` of each row).
pub fn dm_from_along(q: &AlongQ, n: usize) -> Result<PolicyValueEstimate> {
    let contributions: Vec<f64> = (0..n).map(|i| q.v(i, 0)).collect();
    PolicyValueEstimate::from_contributions("dm", &contributions)
}

/// `E_n[Σ_t μ̂_t(s_t, a_t) r_t]` with `μ̂` fitted on the whole sample.
pub fn mis_estimate(data: &Dataset, mu: &RatioModel, behavior: &Policy, target: &Policy) -> Result<PolicyValueEstimate> {
    let prep = Prepared::new(data, behavior, target)?;
    mis_from_along(&prep, &mu.along(&prep)?)
}

pub fn mis_from_along(prep: &Prepared<'_>, mu: &RatioAlong) -> Result<PolicyValueEstimate> {
    let steps = prep.steps();
    let contributions: Vec<f64> = (0..prep.n())
        .map(|i| {
            let traj = prep.data.trajectory(i);
            (0..steps).map(|t| mu.get(i, t) * traj.reward(t)).sum()
        })
        .collect();
    PolicyValueEstimate::from_contributions("mis", &contributions)
}

// ── Doubly robust plug-in ──────────────────────────────────────────────────

/// Per-trajectory plug-in `Σ_t [ρ_t(r_t − q̂_t) + ρ_{t−1} v̂_t]` for row `i`.
pub fn plug_in_term(prep: &Prepared<'_>, q: &AlongQ, ratio: &RatioAlong, i: usize) -> f64 {
    let traj = prep.data.trajectory(i);
    (0..prep.steps())
        .map(|t| ratio.get(i, t) * (traj.reward(t) - q.q(i, t)) + ratio.prev(i, t) * q.v(i, t))
        .sum()
}

/// Control-variate part `Σ_t (−ρ_t q̂_t + ρ_{t−1} v̂_t)` for row `i`; mean zero
/// when `ρ` is the true `λ` (or `μ` on Markov data), for any fixed `q̂`.
pub fn control_variate_term(prep: &Prepared<'_>, q: &AlongQ, ratio: &RatioAlong, i: usize) -> f64 {
    (0..prep.steps())
        .map(|t| -ratio.get(i, t) * q.q(i, t) + ratio.prev(i, t) * q.v(i, t))
        .sum()
}

/// Cross-fitting controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFit {
    pub k: usize,
    pub seed: u64,
    /// Number of independent splits to average (1 = single split).
    pub repeats: usize,
}

impl Default for CrossFit {
    fn default() -> Self {
        CrossFit {
            k: 2,
            seed: 0,
            repeats: 1,
        }
    }
}

/// Per-fold nuisances together with the fold assignment that produced them.
pub struct NuisanceSet {
    folds: FoldAssignment,
    q: Vec<NuisanceFit<AlongQ>>,
    ratio: Vec<NuisanceFit<RatioAlong>>,
}

impl NuisanceSet {
    /// Checks that fold `j`'s nuisances never saw a row of fold `j`.
    pub fn new(folds: FoldAssignment, q: Vec<NuisanceFit<AlongQ>>, ratio: Vec<NuisanceFit<RatioAlong>>) -> Result<Self> {
        learners::check_fit_count(&q, folds.k())?;
        learners::check_fit_count(&ratio, folds.k())?;
        for j in 0..folds.k() {
            for rows in [&q[j].train_rows, &ratio[j].train_rows] {
                if let Some(&row) = rows.iter().find(|&&i| folds.fold_of(i) == j) {
                    return Err(Error::FoldLeakage { fold: j, row });
                }
            }
        }
        Ok(NuisanceSet { folds, q, ratio })
    }

    /// Fits both learners on every fold complement.
    pub fn fit(prep: &Prepared<'_>, folds: FoldAssignment, q: &dyn QLearner, ratio: &dyn RatioLearner) -> Result<Self> {
        let sets: Vec<Vec<usize>> = (0..folds.k()).map(|j| folds.complement(j)).collect();
        let qf = q.fit_sets(prep, &sets)?;
        let rf = ratio.fit_sets(prep, &sets)?;
        NuisanceSet::new(folds, qf, rf)
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    /// Grand mean of the plug-in, each row using its own fold's nuisances.
    pub fn estimate(&self, prep: &Prepared<'_>, name: &str) -> Result<PolicyValueEstimate> {
        let contributions: Vec<f64> = (0..prep.n())
            .map(|i| {
                let j = self.folds.fold_of(i);
                plug_in_term(prep, &self.q[j].along, &self.ratio[j].along, i)
            })
            .collect();
        PolicyValueEstimate::from_contributions(name, &contributions)
    }
}

fn cross_fitted(
    name: &str,
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    q: &dyn QLearner,
    ratio: &dyn RatioLearner,
    opts: CrossFit,
) -> Result<PolicyValueEstimate> {
    if opts.repeats == 0 {
        return Err(Error::config("cross-fitting needs at least one repeat"));
    }
    let prep = Prepared::new(data, behavior, target)?;
    let mut rho = 0.0;
    let mut se = 0.0;
    for r in 0..opts.repeats {
        let seed = if opts.repeats == 1 { opts.seed } else { rng::derive(opts.seed, r as u64) };
        let folds = assign_folds(data.n(), opts.k, seed)?;
        let est = NuisanceSet::fit(&prep, folds, q, ratio)?.estimate(&prep, name)?;
        rho += est.rho_hat;
        se += est.std_error;
    }
    let reps = opts.repeats as f64;
    Ok(PolicyValueEstimate {
        rho_hat: rho / reps,
        std_error: se / reps,
        n: data.n(),
        estimator_name: name.to_string(),
    })
}

/// Cross-fitted DRL under the non-Markov model: ratios are cumulative `λ`
/// (pass [`KnownLambda`]) or a learner of them.
pub fn drl_m1(
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    q: &dyn QLearner,
    lambda: &dyn RatioLearner,
    opts: CrossFit,
) -> Result<PolicyValueEstimate> {
    cross_fitted("drl_m1", data, behavior, target, q, lambda, opts)
}

/// Cross-fitted DRL under the Markov model with a marginal-ratio learner.
pub fn drl_m2(
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    q: &dyn QLearner,
    mu: &dyn RatioLearner,
    opts: CrossFit,
) -> Result<PolicyValueEstimate> {
    cross_fitted("drl_m2", data, behavior, target, q, mu, opts)
}

fn adaptive<Q: QFunction + ?Sized>(
    name: &str,
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    qhat: &Q,
    ratio: &RatioModel,
) -> Result<PolicyValueEstimate> {
    let prep = Prepared::new(data, behavior, target)?;
    let q = AlongQ::from_q(qhat, &prep);
    let r = ratio.along(&prep)?;
    adaptive_from_along(name, &prep, &q, &r)
}

/// No-split plug-in from nuisances fitted on the full sample.
pub fn adaptive_from_along(name: &str, prep: &Prepared<'_>, q: &AlongQ, ratio: &RatioAlong) -> Result<PolicyValueEstimate> {
    let contributions: Vec<f64> = (0..prep.n()).map(|i| plug_in_term(prep, q, ratio, i)).collect();
    PolicyValueEstimate::from_contributions(name, &contributions)
}

/// No-split DRL(M1); `lambdahat` is typically [`RatioModel::KnownLambda`].
pub fn dr_adaptive_m1<Q: QFunction + ?Sized>(
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    qhat: &Q,
    lambdahat: &RatioModel,
) -> Result<PolicyValueEstimate> {
    adaptive("dr_adaptive_m1", data, behavior, target, qhat, lambdahat)
}

/// No-split DRL(M2) with the Markov `v̂_t(s_t)`.
pub fn dr_adaptive_m2<Q: QFunction + ?Sized>(
    data: &Dataset,
    behavior: &Policy,
    target: &Policy,
    qhat: &Q,
    muhat: &RatioModel,
) -> Result<PolicyValueEstimate> {
    adaptive("dr_adaptive_m2", data, behavior, target, qhat, muhat)
}
