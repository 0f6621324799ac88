//! Efficient influence functions under the non-Markov (M1) and Markov (M2)
//! models, and the influence function of marginalized importance sampling with
//! an exact histogram state ratio.

use super::dp::MuTable;
use super::tabular::TabularMdpSpec;
use crate::data::{StateRef, Trajectory};
use crate::error::Result;
use crate::policy::Policy;
use crate::ratios::{eta, lambda_path, v_from_q, QFunction};

/// `φ_M1 = −ρ + Σ_t [λ_t (r_t − q_t) + λ_{t−1} v_t]`.
pub fn eif_m1<Q: QFunction + ?Sized>(
    traj: &Trajectory,
    behavior: &Policy,
    target: &Policy,
    q: &Q,
    rho: f64,
) -> Result<f64> {
    let lambda = lambda_path(traj, behavior, target)?;
    let mut total = -rho;
    let mut prev = 1.0;
    for (t, &lam) in lambda.iter().enumerate() {
        let s = traj.state(t);
        total += lam * (traj.reward(t) - q.q(t, s, traj.action(t))) + prev * v_from_q(q, target, t, s);
        prev = lam;
    }
    Ok(total)
}

/// `φ_M2 = −ρ + Σ_t [μ_t (r_t − q_t) + μ_{t−1} v_t]` with `μ_{−1} = 1`.
pub fn eif_m2<Q, M>(traj: &Trajectory, behavior: &Policy, target: &Policy, q: &Q, mu: M, rho: f64) -> Result<f64>
where
    Q: QFunction + ?Sized,
    M: Fn(usize, StateRef<'_>, usize) -> f64,
{
    let mut total = -rho;
    let mut prev = 1.0;
    for t in 0..traj.len() {
        let (s, a) = (traj.state(t), traj.action(t));
        // Surfaces overlap failures on the logged action.
        eta(behavior, target, t, s, a)?;
        let m = mu(t, s, a);
        total += m * (traj.reward(t) - q.q(t, s, a)) + prev * v_from_q(q, target, t, s);
        prev = m;
    }
    Ok(total)
}

/// The two pieces of `φ + ρ`: the importance-weighted rewards `Σ_t ρ_t r_t` and
/// the control variate `Σ_t (−ρ_t q_t + ρ_{t−1} v_t)`, for any ratio sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EifParts {
    pub weighted_rewards: f64,
    pub control_variate: f64,
}

pub fn eif_parts<Q: QFunction + ?Sized>(traj: &Trajectory, target: &Policy, q: &Q, ratios: &[f64]) -> EifParts {
    let mut weighted_rewards = 0.0;
    let mut control_variate = 0.0;
    for (t, &r) in ratios.iter().enumerate() {
        let s = traj.state(t);
        let prev = if t == 0 { 1.0 } else { ratios[t - 1] };
        weighted_rewards += r * traj.reward(t);
        control_variate += -r * q.q(t, s, traj.action(t)) + prev * v_from_q(q, target, t, s);
    }
    EifParts {
        weighted_rewards,
        control_variate,
    }
}

/// `ψ = Σ_t [μ_t r_t + (λ_{t−1} − w_t(s_t)) ř_t(s_t)]` with
/// `ř_t(s) = Σ_a π^e(a|s) E[r_t | s, a]`; the first-order expansion of the MIS
/// estimator with histogram `ŵ` (not centered).
pub fn mis_influence(
    traj: &Trajectory,
    spec: &TabularMdpSpec,
    behavior: &Policy,
    target: &Policy,
    mu: &MuTable,
) -> Result<f64> {
    let lambda = lambda_path(traj, behavior, target)?;
    let mut total = 0.0;
    for t in 0..traj.len() {
        let (s, a) = (traj.state(t), traj.action(t));
        let code = s.code();
        let prev = if t == 0 { 1.0 } else { lambda[t - 1] };
        let r_check: f64 = target
            .probs(t, s)
            .iter()
            .enumerate()
            .map(|(b, p)| p * spec.reward_mean(t, code, b))
            .sum();
        total += mu.mu(t, code, a) * traj.reward(t) + (prev - mu.w(t, code)) * r_check;
    }
    Ok(total)
}
