//! Exact backward and forward recursions on a tabular model: the target
//! q-function, state-action marginals under a policy, and the marginal ratios.

use serde::{Deserialize, Serialize};

use super::tabular::TabularMdpSpec;
use crate::data::StateRef;
use crate::error::Result;
use crate::policy::Policy;
use crate::ratios::{ratio_of, QFunction};

/// Exact `q_t(s, a)` and `v_t(s)` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    /// `[t][s][a]`.
    q: Vec<f64>,
    /// `[t][s]`, with one extra all-zero layer for `v_{T+1}`.
    v: Vec<f64>,
}

impl QTable {
    pub fn steps(&self) -> usize {
        self.v.len() / self.n_states - 1
    }

    pub fn q_at(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[(t * self.n_states + s) * self.n_actions + a]
    }

    /// `v_t(s)`; zero at `t = T + 1`.
    pub fn v(&self, t: usize, s: usize) -> f64 {
        self.v[t * self.n_states + s]
    }

    /// `E_{s_0}[v_0(s_0)]` under an initial law.
    pub fn value(&self, initial: &[f64]) -> f64 {
        initial.iter().enumerate().map(|(s, p)| p * self.v(0, s)).sum()
    }
}

impl QFunction for QTable {
    fn q(&self, t: usize, s: StateRef<'_>, a: usize) -> f64 {
        self.q_at(t, s.code(), a)
    }
}

fn policy_row(policy: &Policy, t: usize, s: usize, out: &mut [f64]) {
    policy.probs_into(t, StateRef::Discrete(s), out);
}

/// Backward recursion `q_T = E[r_T | s, a]`, `q_t = E[r_t + v_{t+1}(s') | s, a]`,
/// `v_t = Σ_a π^e(a|s) q_t(s, a)`.
pub fn dp_q(spec: &TabularMdpSpec, target: &Policy) -> Result<QTable> {
    target.check_space(&spec.space_spec())?;
    let (ns, na, steps) = (spec.n_states(), spec.n_actions(), spec.steps());
    let mut q = vec![0.0; steps * ns * na];
    let mut v = vec![0.0; (steps + 1) * ns];
    let mut probs = vec![0.0; na];
    for t in (0..steps).rev() {
        for s in 0..ns {
            policy_row(target, t, s, &mut probs);
            let mut vs = 0.0;
            for a in 0..na {
                let next = &v[(t + 1) * ns..(t + 2) * ns];
                let cont: f64 = spec.transition(t, s, a).iter().zip(next).map(|(p, x)| p * x).sum();
                let cell = spec.reward_mean(t, s, a) + cont;
                q[(t * ns + s) * na + a] = cell;
                if probs[a] > 0.0 {
                    vs += probs[a] * cell;
                }
            }
            v[t * ns + s] = vs;
        }
    }
    Ok(QTable {
        n_states: ns,
        n_actions: na,
        q,
        v,
    })
}

/// `ρ^{π_e} = E[v_0(s_0)]`.
pub fn exact_value(spec: &TabularMdpSpec, target: &Policy) -> Result<f64> {
    Ok(dp_q(spec, target)?.value(spec.initial()))
}

/// Time-`t` marginals `p_t(s)` and `p_t(s, a)` under one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    n_states: usize,
    n_actions: usize,
    state: Vec<f64>,
    pair: Vec<f64>,
}

impl Marginals {
    pub fn steps(&self) -> usize {
        self.state.len() / self.n_states
    }

    pub fn state(&self, t: usize, s: usize) -> f64 {
        self.state[t * self.n_states + s]
    }

    pub fn pair(&self, t: usize, s: usize, a: usize) -> f64 {
        self.pair[(t * self.n_states + s) * self.n_actions + a]
    }
}

/// Forward recursion of the state and state-action marginals.
pub fn marginals(spec: &TabularMdpSpec, policy: &Policy) -> Result<Marginals> {
    policy.check_space(&spec.space_spec())?;
    let (ns, na, steps) = (spec.n_states(), spec.n_actions(), spec.steps());
    let mut state = vec![0.0; steps * ns];
    let mut pair = vec![0.0; steps * ns * na];
    state[..ns].copy_from_slice(spec.initial());
    let mut probs = vec![0.0; na];
    for t in 0..steps {
        for s in 0..ns {
            let ps = state[t * ns + s];
            if ps == 0.0 {
                continue;
            }
            policy_row(policy, t, s, &mut probs);
            for a in 0..na {
                let m = ps * probs[a];
                pair[(t * ns + s) * na + a] = m;
                if t + 1 < steps && m > 0.0 {
                    for (s2, p) in spec.transition(t, s, a).iter().enumerate() {
                        state[(t + 1) * ns + s2] += m * p;
                    }
                }
            }
        }
    }
    Ok(Marginals {
        n_states: ns,
        n_actions: na,
        state,
        pair,
    })
}

/// Exact `w_t(s) = p^e_t(s)/p^b_t(s)` and `μ_t(s, a) = p^e_t(s, a)/p^b_t(s, a)`.
/// Cells the behavior policy never reaches hold zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuTable {
    n_states: usize,
    n_actions: usize,
    w: Vec<f64>,
    mu: Vec<f64>,
}

impl MuTable {
    pub fn w(&self, t: usize, s: usize) -> f64 {
        self.w[t * self.n_states + s]
    }

    pub fn mu(&self, t: usize, s: usize, a: usize) -> f64 {
        self.mu[(t * self.n_states + s) * self.n_actions + a]
    }

    /// Largest `μ_t(s, a)` over all cells.
    pub fn max_mu(&self) -> f64 {
        self.mu.iter().copied().fold(0.0, f64::max)
    }
}

/// Both marginal recursions and their ratio.
pub fn exact_mu(spec: &TabularMdpSpec, behavior: &Policy, target: &Policy) -> Result<MuTable> {
    let pb = marginals(spec, behavior)?;
    let pe = marginals(spec, target)?;
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let steps = spec.steps();
    let mut w = vec![0.0; steps * ns];
    let mut mu = vec![0.0; steps * ns * na];
    for t in 0..steps {
        for s in 0..ns {
            w[t * ns + s] = if pb.state(t, s) > 0.0 { pe.state(t, s) / pb.state(t, s) } else { 0.0 };
            for a in 0..na {
                mu[(t * ns + s) * na + a] = ratio_of(pe.pair(t, s, a), pb.pair(t, s, a), t, a)?;
            }
        }
    }
    Ok(MuTable {
        n_states: ns,
        n_actions: na,
        w,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::mean_return;
    use crate::oracle::tabular::{random_policy, RewardAtom};
    use crate::policy::TabularPolicy;
    use crate::rng;
    use proptest::prelude::*;

    /// `T = 1`, two states and actions.
    fn hand_spec() -> TabularMdpSpec {
        TabularMdpSpec::stationary(
            1,
            vec![0.6, 0.4],
            vec![
                vec![vec![0.7, 0.3], vec![0.1, 0.9]],
                vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            ],
            vec![
                vec![vec![RewardAtom::sure(1.0)], vec![RewardAtom { value: 0.0, prob: 0.5 }, RewardAtom { value: 4.0, prob: 0.5 }]],
                vec![vec![RewardAtom::sure(3.0)], vec![RewardAtom::sure(-1.0)]],
            ],
        )
        .unwrap()
    }

    fn hand_policy() -> Policy {
        Policy::Tabular(TabularPolicy::stationary(vec![vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap())
    }

    #[test]
    fn hand_computed_recursion() {
        let q = dp_q(&hand_spec(), &hand_policy()).unwrap();
        // q_1 = mean rewards: (1, 2; 3, −1); v_1 = (0.25 + 1.5, 1.5 − 0.5) = (1.75, 1.0).
        assert_eq!(q.q_at(1, 0, 1), 2.0);
        assert_eq!(q.v(1, 0), 1.75);
        assert_eq!(q.v(1, 1), 1.0);
        // q_0(0,0) = 1 + 0.7·1.75 + 0.3·1 = 2.525; q_0(0,1) = 2 + 0.1·1.75 + 0.9·1 = 3.075.
        // q_0(1,0) = 3 + 1.75 = 4.75; q_0(1,1) = −1 + 0.5·1.75 + 0.5·1 = 0.375.
        let expect = [[2.525, 3.075], [4.75, 0.375]];
        for s in 0..2 {
            for a in 0..2 {
                assert!((q.q_at(0, s, a) - expect[s][a]).abs() < 1e-14);
            }
        }
        let v0 = [0.25 * 2.525 + 0.75 * 3.075, 0.5 * 4.75 + 0.5 * 0.375];
        assert!((q.value(&[0.6, 0.4]) - (0.6 * v0[0] + 0.4 * v0[1])).abs() < 1e-14);
    }

    #[test]
    fn zero_rewards_give_zero_table() {
        let spec = TabularMdpSpec::stationary(
            3,
            vec![1.0, 0.0],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.2, 0.8]]],
            vec![vec![vec![RewardAtom::sure(0.0)]], vec![vec![RewardAtom::sure(0.0)]]],
        )
        .unwrap();
        let q = dp_q(&spec, &Policy::uniform(1)).unwrap();
        assert!(q.q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dp_value_matches_rollouts() {
        let mut g = rng::root(11);
        let spec = TabularMdpSpec::random(3, 2, 4, &mut g).unwrap();
        let pi = random_policy(3, 2, 0.2, &mut g).unwrap();
        let rho = exact_value(&spec, &pi).unwrap();
        let (mean, se) = mean_return(&spec, &pi, 100_000, 12).unwrap();
        assert!((mean - rho).abs() < 4.0 * se, "{mean} vs {rho} (se {se})");
    }

    #[test]
    fn behavior_equal_target_gives_unit_ratios() {
        let mut g = rng::root(2);
        let spec = TabularMdpSpec::random(4, 3, 5, &mut g).unwrap();
        let pi = random_policy(4, 3, 0.5, &mut g).unwrap();
        let mu = exact_mu(&spec, &pi, &pi).unwrap();
        for t in 0..spec.steps() {
            for s in 0..4 {
                assert!((mu.w(t, s) - 1.0).abs() < 1e-12);
                for a in 0..3 {
                    assert!((mu.mu(t, s, a) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mu_at_step_zero_is_eta() {
        let mut g = rng::root(3);
        let spec = TabularMdpSpec::random(3, 2, 2, &mut g).unwrap();
        let b = random_policy(3, 2, 0.5, &mut g).unwrap();
        let e = random_policy(3, 2, 0.0, &mut g).unwrap();
        let mu = exact_mu(&spec, &b, &e).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let eta = crate::ratios::eta(&b, &e, 0, StateRef::Discrete(s), a).unwrap();
                assert!((mu.mu(0, s, a) - eta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overlap_violation_detected() {
        let spec = hand_spec();
        let b = Policy::Tabular(TabularPolicy::stationary(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap());
        assert!(matches!(
            exact_mu(&spec, &b, &hand_policy()),
            Err(crate::error::Error::OverlapViolation { .. })
        ));
    }

    #[test]
    fn mu_matches_simulated_conditional_mean_of_lambda() {
        let spec = hand_spec();
        let b = Policy::uniform(2);
        let e = hand_policy();
        let mu = exact_mu(&spec, &b, &e).unwrap();
        let data = crate::envs::simulate(&spec, &b, 200_000, 4).unwrap();
        let prep = crate::ratios::Prepared::new(&data, &b, &e).unwrap();
        let t = 1;
        for s in 0..2 {
            for a in 0..2 {
                let xs: Vec<f64> = (0..prep.n())
                    .filter(|&i| data.trajectory(i).state(t).code() == s && data.trajectory(i).action(t) == a)
                    .map(|i| prep.lambda(i, t))
                    .collect();
                let (m, se) = crate::envs::mean_and_se(&xs);
                assert!((m - mu.mu(t, s, a)).abs() < 4.0 * se, "cell ({s},{a}): {m} vs {}", mu.mu(t, s, a));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn recursion_residuals_vanish(seed in any::<u64>(), ns in 1usize..5, na in 1usize..4, horizon in 0usize..6) {
            let mut g = rng::root(seed);
            let spec = TabularMdpSpec::random(ns, na, horizon, &mut g).unwrap();
            let pi = random_policy(ns, na, 0.1, &mut g).unwrap();
            let q = dp_q(&spec, &pi).unwrap();
            for t in 0..spec.steps() {
                for s in 0..ns {
                    for a in 0..na {
                        let next: f64 = spec.transition(t, s, a).iter().enumerate()
                            .map(|(s2, p)| p * q.v(t + 1, s2)).sum();
                        let resid = spec.reward_mean(t, s, a) + next - q.q_at(t, s, a);
                        prop_assert!(resid.abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn marginals_sum_to_one(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, horizon in 0usize..8) {
            let mut g = rng::root(seed);
            let spec = TabularMdpSpec::random(ns, na, horizon, &mut g).unwrap();
            let pi = random_policy(ns, na, 0.1, &mut g).unwrap();
            let m = marginals(&spec, &pi).unwrap();
            for t in 0..spec.steps() {
                let total: f64 = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| m.pair(t, s, a)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
