//! Efficiency bounds as variances of influence functions over simulated
//! behavior trajectories, their exact tabular counterparts, the excess variance
//! of marginalized importance sampling, and the horizon upper bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dp::{dp_q, exact_mu, marginals, MuTable, QTable};
use super::eif::{eif_m1, eif_m2, mis_influence};
use super::tabular::TabularMdpSpec;
use crate::data::{StateRef, Trajectory};
use crate::envs::{mean_and_se, simulate};
use crate::error::{Error, Result};
use crate::estimators::plug_in_term;
use crate::nuisance::{AlongQ, RatioAlong};
use crate::policy::Policy;
use crate::ratios::{lambda_path, ratio_of, Prepared, QFunction};

/// Which semiparametric model the bound refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Non-Markov decision process.
    M1,
    /// Markov decision process.
    M2,
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Sample mean of i.i.d. draws.
    pub fn mean(xs: &[f64]) -> Self {
        let (value, std_error) = mean_and_se(xs);
        McEstimate { value, std_error }
    }

    /// Sample variance, with the delta-method error `sd((x − x̄)²)/√n`.
    pub fn variance(xs: &[f64]) -> Self {
        let (m, _) = mean_and_se(xs);
        let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let (_, se) = mean_and_se(&sq);
        let n = xs.len() as f64;
        McEstimate {
            value: sq.iter().sum::<f64>() / (n - 1.0).max(1.0),
            std_error: se,
        }
    }

    /// `Var(x) − Var(y)` from paired draws, with its paired error.
    pub fn variance_difference(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len(), "paired samples must have equal length");
        let (mx, _) = mean_and_se(xs);
        let (my, _) = mean_and_se(ys);
        let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx).powi(2) - (y - my).powi(2)).collect();
        let (_, se) = mean_and_se(&d);
        let n = xs.len() as f64;
        McEstimate {
            value: d.iter().sum::<f64>() / (n - 1.0).max(1.0),
            std_error: se,
        }
    }
}

/// Exact nuisances of a tabular problem.
pub struct TabularOracle<'a> {
    pub spec: &'a TabularMdpSpec,
    pub behavior: &'a Policy,
    pub target: &'a Policy,
    pub q: QTable,
    pub mu: MuTable,
    pub rho: f64,
}

impl<'a> TabularOracle<'a> {
    pub fn new(spec: &'a TabularMdpSpec, behavior: &'a Policy, target: &'a Policy) -> Result<Self> {
        behavior.check_space(&spec.space_spec())?;
        let q = dp_q(spec, target)?;
        let mu = exact_mu(spec, behavior, target)?;
        let rho = q.value(spec.initial());
        Ok(TabularOracle {
            spec,
            behavior,
            target,
            q,
            mu,
            rho,
        })
    }

    pub fn eif_m1(&self, traj: &Trajectory) -> Result<f64> {
        eif_m1(traj, self.behavior, self.target, &self.q, self.rho)
    }

    pub fn eif_m2(&self, traj: &Trajectory) -> Result<f64> {
        eif_m2(traj, self.behavior, self.target, &self.q, |t, s, a| self.mu.mu(t, s.code(), a), self.rho)
    }

    /// Centered MIS influence function `ψ − ρ`.
    pub fn mis_influence(&self, traj: &Trajectory) -> Result<f64> {
        Ok(mis_influence(traj, self.spec, self.behavior, self.target, &self.mu)? - self.rho)
    }

    /// `Var(v_0(s_0))` under the initial law.
    pub fn var_v0(&self) -> f64 {
        let init = self.spec.initial();
        let m: f64 = init.iter().enumerate().map(|(s, p)| p * self.q.v(0, s)).sum();
        init.iter().enumerate().map(|(s, p)| p * (self.q.v(0, s) - m).powi(2)).sum()
    }

    /// `Var(r_t + v_{t+1}(s_{t+1}) | s, a)`; rewards and next states are
    /// conditionally independent.
    pub fn step_var(&self, t: usize, s: usize, a: usize) -> f64 {
        let p = self.spec.transition(t, s, a);
        let m: f64 = p.iter().enumerate().map(|(s2, x)| x * self.q.v(t + 1, s2)).sum();
        let v: f64 = p.iter().enumerate().map(|(s2, x)| x * (self.q.v(t + 1, s2) - m).powi(2)).sum();
        self.spec.reward_var(t, s, a) + v
    }

    fn next_value_var(&self, t: usize, s: usize, a: usize) -> f64 {
        self.step_var(t, s, a) - self.spec.reward_var(t, s, a)
    }

    /// `Σ_t λ_t² Var(r_t + v_{t+1} | s_t, a_t)` along one trajectory: the random
    /// part of the law-of-total-variance form of the M1 bound.
    pub fn m1_variance_terms(&self, traj: &Trajectory) -> Result<f64> {
        let lambda = lambda_path(traj, self.behavior, self.target)?;
        Ok(lambda
            .iter()
            .enumerate()
            .map(|(t, l)| l * l * self.step_var(t, traj.state(t).code(), traj.action(t)))
            .sum())
    }

    /// Per-trajectory terms of the excess variance of MIS over the M2 bound:
    /// the action-level variance of `Δ_t(a) = λ_{t−1}(η_t q_t − v_t) − (λ_{t−1} − w_t)(η_t r̄_t − ř_t)`
    /// under `π^b`, plus `(λ_t − μ_t)² Var(v_{t+1}(s_{t+1}) | s_t, a_t)`.
    pub fn mis_gap_terms(&self, traj: &Trajectory) -> Result<f64> {
        let lambda = lambda_path(traj, self.behavior, self.target)?;
        let na = self.spec.n_actions();
        let mut pb = vec![0.0; na];
        let mut pe = vec![0.0; na];
        let mut total = 0.0;
        for t in 0..traj.len() {
            let (sref, a_t) = (traj.state(t), traj.action(t));
            let s = sref.code();
            self.behavior.probs_into(t, sref, &mut pb);
            self.target.probs_into(t, sref, &mut pe);
            let prev = if t == 0 { 1.0 } else { lambda[t - 1] };
            let w = self.mu.w(t, s);
            let v = self.q.v(t, s);
            let r_check: f64 = (0..na).map(|a| pe[a] * self.spec.reward_mean(t, s, a)).sum();
            for a in 0..na {
                if pb[a] == 0.0 {
                    continue;
                }
                let eta = ratio_of(pe[a], pb[a], t, a)?;
                let d = prev * (eta * self.q.q_at(t, s, a) - v)
                    - (prev - w) * (eta * self.spec.reward_mean(t, s, a) - r_check);
                total += pb[a] * d * d;
            }
            let gap = lambda[t] - self.mu.mu(t, s, a_t);
            total += gap * gap * self.next_value_var(t, s, a_t);
        }
        Ok(total)
    }
}

/// Influence-function draws over `n_mc` simulated behavior trajectories.
pub struct OracleDraws {
    pub rho: f64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    /// Centered MIS influence function.
    pub mis: Vec<f64>,
    pub m1_terms: Vec<f64>,
    pub mis_gap_terms: Vec<f64>,
    pub var_v0: f64,
}

pub fn oracle_draws(
    spec: &TabularMdpSpec,
    behavior: &Policy,
    target: &Policy,
    n_mc: usize,
    seed: u64,
) -> Result<OracleDraws> {
    if n_mc < 2 {
        return Err(Error::config("Monte Carlo bounds need at least two trajectories"));
    }
    let oracle = TabularOracle::new(spec, behavior, target)?;
    let data = simulate(spec, behavior, n_mc, seed)?;
    let rows: Vec<[f64; 5]> = data
        .trajectories()
        .par_iter()
        .map(|tr| {
            Ok([
                oracle.eif_m1(tr)?,
                oracle.eif_m2(tr)?,
                oracle.mis_influence(tr)?,
                oracle.m1_variance_terms(tr)?,
                oracle.mis_gap_terms(tr)?,
            ])
        })
        .collect::<Result<_>>()?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    Ok(OracleDraws {
        rho: oracle.rho,
        m1: col(0),
        m2: col(1),
        mis: col(2),
        m1_terms: col(3),
        mis_gap_terms: col(4),
        var_v0: oracle.var_v0(),
    })
}

/// Both bounds from one paired sample, and their difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffBounds {
    pub m1: McEstimate,
    pub m2: McEstimate,
    /// `EffBd(M1) − EffBd(M2)` with the paired error.
    pub m1_minus_m2: McEstimate,
}

impl OracleDraws {
    pub fn bounds(&self) -> EffBounds {
        EffBounds {
            m1: McEstimate::variance(&self.m1),
            m2: McEstimate::variance(&self.m2),
            m1_minus_m2: McEstimate::variance_difference(&self.m1, &self.m2),
        }
    }

    /// `Var(v_0) + E[Σ_t λ_t² Var(r_t + v_{t+1} | s_t, a_t)]`.
    pub fn m1_by_decomposition(&self) -> McEstimate {
        let m = McEstimate::mean(&self.m1_terms);
        McEstimate {
            value: self.var_v0 + m.value,
            std_error: m.std_error,
        }
    }

    /// Excess variance of MIS over `EffBd(M2)` from the conditional-variance form.
    pub fn mis_gap(&self) -> McEstimate {
        McEstimate::mean(&self.mis_gap_terms)
    }

    /// `Var(ψ) − Var(φ_M2)` from paired draws.
    pub fn mis_excess_direct(&self) -> McEstimate {
        McEstimate::variance_difference(&self.mis, &self.m2)
    }
}

/// `EffBd` of one model as the sample variance of its EIF.
pub fn effbound_mc(
    spec: &TabularMdpSpec,
    behavior: &Policy,
    target: &Policy,
    model: Model,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let b = effbounds(spec, behavior, target, n_mc, seed)?;
    Ok(match model {
        Model::M1 => b.m1,
        Model::M2 => b.m2,
    })
}

pub fn effbounds(spec: &TabularMdpSpec, behavior: &Policy, target: &Policy, n_mc: usize, seed: u64) -> Result<EffBounds> {
    Ok(oracle_draws(spec, behavior, target, n_mc, seed)?.bounds())
}

/// Excess asymptotic variance of MIS with histogram `ŵ` over `EffBd(M2)`.
pub fn mis_gap_mc(spec: &TabularMdpSpec, behavior: &Policy, target: &Policy, n_mc: usize, seed: u64) -> Result<McEstimate> {
    Ok(oracle_draws(spec, behavior, target, n_mc, seed)?.mis_gap())
}

/// Sample variance of the plug-in influence values `Σ_t [ρ_t(r_t − q_t) + ρ_{t−1} v_t] − ρ`
/// for any environment, given externally supplied nuisances (e.g. a
/// high-capacity regression standing in for the true q).
pub fn effbound_from_data<Q: QFunction + ?Sized>(
    prep: &Prepared<'_>,
    q: &Q,
    ratio: &RatioAlong,
    rho: f64,
) -> McEstimate {
    let along = AlongQ::from_q(q, prep);
    let xs: Vec<f64> = (0..prep.n()).map(|i| plug_in_term(prep, &along, ratio, i) - rho).collect();
    McEstimate::variance(&xs)
}

/// Closed-form bounds on a tabular model, via forward recursions of `p^b_t`
/// and of `E_b[λ_{t−1}² ; s_t = s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactBounds {
    pub m1: f64,
    pub m2: f64,
    pub mis_gap: f64,
}

pub fn exact_bounds(spec: &TabularMdpSpec, behavior: &Policy, target: &Policy) -> Result<ExactBounds> {
    let oracle = TabularOracle::new(spec, behavior, target)?;
    let pb = marginals(spec, behavior)?;
    let (ns, na, steps) = (spec.n_states(), spec.n_actions(), spec.steps());
    // g[s] = E_b[λ_{t−1}² ; s_t = s].
    let mut g: Vec<f64> = spec.initial().to_vec();
    let mut probs_b = vec![0.0; na];
    let mut probs_e = vec![0.0; na];
    let (mut m1, mut m2, mut gap) = (oracle.var_v0(), oracle.var_v0(), 0.0);
    for t in 0..steps {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let ps = pb.state(t, s);
            if ps == 0.0 {
                continue;
            }
            let sref = StateRef::Discrete(s);
            behavior.probs_into(t, sref, &mut probs_b);
            target.probs_into(t, sref, &mut probs_e);
            let w = oracle.mu.w(t, s);
            let v = oracle.q.v(t, s);
            let r_check: f64 = (0..na).map(|a| probs_e[a] * spec.reward_mean(t, s, a)).sum();
            // E[λ²], E[λ(λ − w)], E[(λ − w)²] restricted to s_t = s.
            let e_ll = g[s];
            let e_lm = g[s] - ps * w * w;
            let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
            for a in 0..na {
                if probs_b[a] == 0.0 {
                    continue;
                }
                let eta = ratio_of(probs_e[a], probs_b[a], t, a)?;
                let x = eta * oracle.q.q_at(t, s, a) - v;
                let y = eta * spec.reward_mean(t, s, a) - r_check;
                saa += probs_b[a] * x * x;
                sab += probs_b[a] * x * y;
                sbb += probs_b[a] * y * y;
                let lam2 = g[s] * probs_b[a] * eta * eta;
                let pair = pb.pair(t, s, a);
                let mu = oracle.mu.mu(t, s, a);
                let step = oracle.step_var(t, s, a);
                m1 += lam2 * step;
                m2 += pair * mu * mu * step;
                gap += (lam2 - pair * mu * mu) * oracle.next_value_var(t, s, a);
                for (s2, p) in spec.transition(t, s, a).iter().enumerate() {
                    next[s2] += lam2 * p;
                }
            }
            gap += e_ll * saa - 2.0 * e_lm * sab + e_lm * sbb;
        }
        g = next;
    }
    Ok(ExactBounds { m1, m2, mis_gap: gap })
}

/// Constants and bounds of the horizon comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon: usize,
    /// `sup η_t` over behavior-reachable cells.
    pub c: f64,
    /// `sup μ_t`.
    pub c_prime: f64,
    /// Width of the reward range (rewards shifted to start at zero).
    pub reward_range: f64,
    pub m1: McEstimate,
    pub m2: McEstimate,
    /// `C^{T+1} R² (T+1)²`.
    pub m1_upper: f64,
    /// `C' R² (T+1)²`.
    pub m2_upper: f64,
}

/// Checks `EffBd(M2) ≤ C' R² (T+1)²` and `EffBd(M1) ≤ C^{T+1} R² (T+1)²`, each
/// with `4·SE` Monte Carlo slack.
pub fn horizon_bound_check(
    spec: &TabularMdpSpec,
    behavior: &Policy,
    target: &Policy,
    n_mc: usize,
    seed: u64,
) -> Result<HorizonReport> {
    let mu = exact_mu(spec, behavior, target)?;
    let pb = marginals(spec, behavior)?;
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let mut c: f64 = 0.0;
    for t in 0..spec.steps() {
        for s in 0..ns {
            for a in 0..na {
                if pb.pair(t, s, a) > 0.0 {
                    let sref = StateRef::Discrete(s);
                    c = c.max(ratio_of(target.prob(t, sref, a), behavior.prob(t, sref, a), t, a)?);
                }
            }
        }
    }
    let (lo, hi) = spec.reward_range();
    let range = hi - lo;
    let k = spec.steps() as f64;
    let bounds = effbounds(spec, behavior, target, n_mc, seed)?;
    let report = HorizonReport {
        horizon: spec.horizon(),
        c,
        c_prime: mu.max_mu(),
        reward_range: range,
        m1: bounds.m1,
        m2: bounds.m2,
        m1_upper: c.powf(k) * range * range * k * k,
        m2_upper: mu.max_mu() * range * range * k * k,
    };
    for (name, est, upper) in [("M1", report.m1, report.m1_upper), ("M2", report.m2, report.m2_upper)] {
        if est.value > upper + 4.0 * est.std_error {
            return Err(Error::BoundViolated(format!(
                "EffBd({name}) = {} exceeds {upper} at T = {}",
                est.value, report.horizon
            )));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;
    use crate::oracle::tabular::{random_policy, RewardAtom};
    use crate::policy::TabularPolicy;
    use crate::rng;

    fn random_problem(seed: u64) -> (TabularMdpSpec, Policy, Policy) {
        let mut g = rng::root(seed);
        let spec = TabularMdpSpec::random(3, 2, 4, &mut g).unwrap();
        let b = random_policy(3, 2, 0.5, &mut g).unwrap();
        let e = random_policy(3, 2, 0.0, &mut g).unwrap();
        (spec, b, e)
    }

    #[test]
    fn variance_estimates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((McEstimate::variance(&xs).value - 5.0 / 3.0).abs() < 1e-15);
        let d = McEstimate::variance_difference(&xs, &xs);
        assert_eq!(d.value, 0.0);
        assert_eq!(d.std_error, 0.0);
    }

    fn return_variance(spec: &TabularMdpSpec, pi: &Policy, n: u64) -> McEstimate {
        let returns: Vec<f64> = (0..n).map(|i| rollout(spec, pi, &mut rng::stream(99, i)).total_reward()).collect();
        McEstimate::variance(&returns)
    }

    #[test]
    fn on_policy_bounds_equal_return_variance_for_deterministic_target() {
        let (spec, _, _) = random_problem(1);
        let e = Policy::Tabular(TabularPolicy::deterministic(&[1, 0, 1], 2).unwrap());
        let b = effbounds(&spec, &e, &e, 50_000, 2).unwrap();
        assert!((b.m1.value - b.m2.value).abs() < 1e-12);
        let direct = return_variance(&spec, &e, 50_000);
        let se = (direct.std_error.powi(2) + b.m1.std_error.powi(2)).sqrt();
        assert!((direct.value - b.m1.value).abs() < 4.0 * se, "{direct:?} {b:?}");
        let exact = exact_bounds(&spec, &e, &e).unwrap();
        assert!((exact.m1 - exact.m2).abs() < 1e-12);
        assert!(exact.mis_gap.abs() < 1e-12);
    }

    #[test]
    fn on_policy_bound_drops_action_noise_for_stochastic_target() {
        // The EIF replaces each q_t(s_t, a_t) by its target average, so the
        // bound sits below the return variance by E[Σ_t Var_a q_t(s_t, a)].
        let (spec, _, e) = random_problem(1);
        let exact = exact_bounds(&spec, &e, &e).unwrap();
        let direct = return_variance(&spec, &e, 50_000);
        assert!(exact.m1 < direct.value - 4.0 * direct.std_error);
        assert!((exact.m1 - exact.m2).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_exact_forms() {
        let (spec, b, e) = random_problem(3);
        let draws = oracle_draws(&spec, &b, &e, 100_000, 4).unwrap();
        let exact = exact_bounds(&spec, &b, &e).unwrap();
        let bounds = draws.bounds();
        for (mc, x) in [
            (bounds.m1, exact.m1),
            (bounds.m2, exact.m2),
            (draws.m1_by_decomposition(), exact.m1),
            (draws.mis_gap(), exact.mis_gap),
            (draws.mis_excess_direct(), exact.mis_gap),
        ] {
            assert!((mc.value - x).abs() < 5.0 * mc.std_error, "{mc:?} vs exact {x}");
        }
        assert!(exact.m2 <= exact.m1);
        assert!(exact.mis_gap >= 0.0);
    }

    #[test]
    fn plug_in_variance_matches_tabular_bound() {
        let (spec, b, e) = random_problem(5);
        let oracle = TabularOracle::new(&spec, &b, &e).unwrap();
        let data = simulate(&spec, &b, 20_000, 6).unwrap();
        let prep = Prepared::new(&data, &b, &e).unwrap();
        let lambda = crate::nuisance::RatioModel::KnownLambda.along(&prep).unwrap();
        let via_data = effbound_from_data(&prep, &oracle.q, &lambda, oracle.rho);
        let draws = oracle_draws(&spec, &b, &e, 20_000, 6).unwrap();
        assert!((via_data.value - draws.bounds().m1.value).abs() < 1e-9);
    }

    /// Two states, the target always plays action 0 and the behavior plays it
    /// with probability 2/3, so `η = 1.5` on every logged target action.
    fn constant_eta_chain(horizon: usize) -> (TabularMdpSpec, Policy, Policy) {
        let noisy = |m: f64| vec![RewardAtom { value: m - 0.5, prob: 0.5 }, RewardAtom { value: m + 0.5, prob: 0.5 }];
        let spec = TabularMdpSpec::stationary(
            horizon,
            vec![0.5, 0.5],
            vec![
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
                vec![vec![0.4, 0.6], vec![0.6, 0.4]],
            ],
            vec![vec![noisy(1.0), noisy(0.5)], vec![noisy(0.5), noisy(1.0)]],
        )
        .unwrap();
        let b = Policy::Tabular(TabularPolicy::stationary(vec![vec![2.0 / 3.0, 1.0 / 3.0]; 2]).unwrap());
        let e = Policy::Tabular(TabularPolicy::stationary(vec![vec![1.0, 0.0]; 2]).unwrap());
        (spec, b, e)
    }

    #[test]
    fn horizon_bounds_hold_on_constant_eta_chain() {
        for horizon in [2, 4] {
            let (spec, b, e) = constant_eta_chain(horizon);
            let report = horizon_bound_check(&spec, &b, &e, 20_000, 7).unwrap();
            assert!((report.c - 1.5).abs() < 1e-12);
            assert!(report.m2.value < report.m1.value);
        }
    }

    #[test]
    fn deterministic_problem_has_zero_bounds() {
        let spec = TabularMdpSpec::stationary(
            3,
            vec![1.0, 0.0],
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![vec![RewardAtom::sure(1.0)]], vec![vec![RewardAtom::sure(2.0)]]],
        )
        .unwrap();
        let pi = Policy::uniform(1);
        let report = horizon_bound_check(&spec, &pi, &pi, 100, 1).unwrap();
        assert!(report.m1.value.abs() < 1e-20 && report.m2.value.abs() < 1e-20);
    }
}
