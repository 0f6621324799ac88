//! Density ratios `η_t = π^e/π^b`, cumulative ratios `λ_t = Π_{k≤t} η_k`, and the
//! value map `v_t(s) = Σ_a π^e_t(a|s) q_t(s, a)`.

use rayon::prelude::*;

use crate::data::{Dataset, StateRef, Trajectory};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// A (possibly fitted) q-function `q_t(s, a)`.
pub trait QFunction {
    fn q(&self, t: usize, s: StateRef<'_>, a: usize) -> f64;

    /// Writes `q_t(s, a)` for every action.
    fn q_all(&self, t: usize, s: StateRef<'_>, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.q(t, s, a);
        }
    }
}

impl<F> QFunction for F
where
    F: Fn(usize, StateRef<'_>, usize) -> f64,
{
    fn q(&self, t: usize, s: StateRef<'_>, a: usize) -> f64 {
        self(t, s, a)
    }
}

/// Ratio of two action probabilities; `0/0 = 0`, positive/0 is an overlap violation.
pub fn ratio_of(target_prob: f64, behavior_prob: f64, t: usize, action: usize) -> Result<f64> {
    if behavior_prob > 0.0 {
        Ok(target_prob / behavior_prob)
    } else if target_prob > 0.0 {
        Err(Error::OverlapViolation {
            t,
            action,
            target_prob,
        })
    } else {
        Ok(0.0)
    }
}

/// `η_t(s, a) = π^e_t(a|s) / π^b_t(a|s)`.
pub fn eta(behavior: &Policy, target: &Policy, t: usize, s: StateRef<'_>, a: usize) -> Result<f64> {
    ratio_of(target.prob(t, s, a), behavior.prob(t, s, a), t, a)
}

/// `λ_t` for `t = 0..=T` along one trajectory.
pub fn lambda_path(traj: &Trajectory, behavior: &Policy, target: &Policy) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = 1.0;
    for t in 0..traj.len() {
        acc *= eta(behavior, target, t, traj.state(t), traj.action(t))?;
        out.push(acc);
    }
    Ok(out)
}

/// `v_t(s) = Σ_a π^e_t(a|s)·q_t(s, a)`, an exact finite sum.
pub fn v_from_q<Q: QFunction + ?Sized>(q: &Q, target: &Policy, t: usize, s: StateRef<'_>) -> f64 {
    let probs = target.probs(t, s);
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(a, p)| p * q.q(t, s, a))
        .sum()
}

/// A dataset together with the policy quantities every estimator needs:
/// target action probabilities at each logged state and the `η`/`λ` tables.
pub struct Prepared<'a> {
    pub data: &'a Dataset,
    pub behavior: &'a Policy,
    pub target: &'a Policy,
    steps: usize,
    n_actions: usize,
    target_probs: Vec<f64>,
    eta: Vec<f64>,
    lambda: Vec<f64>,
}

/// Splits a policy into `(base, α)` so that mixtures of a shared base are evaluated once.
fn mixture_parts(p: &Policy) -> (&Policy, f64) {
    match p {
        Policy::Mixture { alpha, base } => (base, *alpha),
        other => (other, 0.0),
    }
}

impl<'a> Prepared<'a> {
    pub fn new(data: &'a Dataset, behavior: &'a Policy, target: &'a Policy) -> Result<Self> {
        behavior.check_space(data.space())?;
        target.check_space(data.space())?;
        let steps = data.steps();
        let na = data.space().n_actions;
        let (bb, ba) = mixture_parts(behavior);
        let (tb, ta) = mixture_parts(target);
        let shared_base = bb == tb;

        let per_row: Vec<Result<(Vec<f64>, Vec<f64>)>> = data
            .trajectories()
            .par_iter()
            .map(|traj| {
                let mut tp = vec![0.0; steps * na];
                let mut eta = vec![0.0; steps];
                let mut bp = vec![0.0; na];
                for t in 0..steps {
                    let s = traj.state(t);
                    let row = &mut tp[t * na..(t + 1) * na];
                    if shared_base {
                        bb.probs_into(t, s, &mut bp);
                        for (r, &b) in row.iter_mut().zip(&bp) {
                            *r = (1.0 - ta) * b + ta / na as f64;
                        }
                        for b in bp.iter_mut() {
                            *b = (1.0 - ba) * *b + ba / na as f64;
                        }
                    } else {
                        target.probs_into(t, s, row);
                        behavior.probs_into(t, s, &mut bp);
                    }
                    let a = traj.action(t);
                    eta[t] = ratio_of(row[a], bp[a], t, a)?;
                }
                Ok((tp, eta))
            })
            .collect();

        let n = data.n();
        let mut target_probs = Vec::with_capacity(n * steps * na);
        let mut eta = Vec::with_capacity(n * steps);
        let mut lambda = Vec::with_capacity(n * steps);
        for r in per_row {
            let (tp, e) = r?;
            target_probs.extend_from_slice(&tp);
            let mut acc = 1.0;
            for &x in &e {
                acc *= x;
                lambda.push(acc);
            }
            eta.extend_from_slice(&e);
        }
        Ok(Prepared {
            data,
            behavior,
            target,
            steps,
            n_actions: na,
            target_probs,
            eta,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `π^e_t(· | s_t^{(i)})`.
    pub fn target_probs(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.steps + t) * self.n_actions;
        &self.target_probs[start..start + self.n_actions]
    }

    pub fn eta(&self, i: usize, t: usize) -> f64 {
        self.eta[i * self.steps + t]
    }

    pub fn lambda(&self, i: usize, t: usize) -> f64 {
        self.lambda[i * self.steps + t]
    }

    /// `λ_{t−1}`, with `λ_{−1} = 1`.
    pub fn lambda_prev(&self, i: usize, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.lambda(i, t - 1)
        }
    }

    /// Row-major `λ` table, `[i * steps + t]`.
    pub fn lambda_table(&self) -> &[f64] {
        &self.lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SpaceSpec, States};
    use crate::policy::{LogisticBernoulli, TabularPolicy};
    use proptest::prelude::*;

    fn logistic(scale: f64, offset: f64) -> Policy {
        Policy::LogisticBernoulli(LogisticBernoulli::new(scale, 0.1, offset).unwrap())
    }

    #[test]
    fn eta_examples() {
        let b = Policy::uniform(2);
        let e = Policy::Tabular(TabularPolicy::deterministic(&[0], 2).unwrap());
        let s = StateRef::Discrete(0);
        assert_eq!(eta(&b, &e, 0, s, 0).unwrap(), 2.0);
        assert_eq!(eta(&b, &e, 0, s, 1).unwrap(), 0.0);
        assert_eq!(eta(&b, &b, 4, s, 1).unwrap(), 1.0);
        assert!(matches!(
            eta(&e, &b, 0, s, 1),
            Err(Error::OverlapViolation { .. })
        ));
        assert_eq!(eta(&e, &e, 0, s, 1).unwrap(), 0.0);
    }

    #[test]
    fn eta_for_the_logistic_pair_at_half() {
        // σ(0.05) = 0.512_497_396_484; p_e = 0.202_499_479, p_b = 0.511_247_657.
        let sig = 1.0 / (1.0 + (-0.05f64).exp());
        let expected = (0.2 * sig + 0.1) / (0.9 * sig + 0.05);
        let x = [0.5];
        let r = eta(&logistic(0.9, 0.05), &logistic(0.2, 0.1), 0, StateRef::Real(&x), 1).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.396_088_816_426_368_7).abs() < 1e-15);
    }

    #[test]
    fn lambda_path_geometric() {
        let b = Policy::uniform(2);
        let e = Policy::Tabular(TabularPolicy::deterministic(&[0], 2).unwrap());
        let traj = Trajectory::new(States::Discrete(vec![0; 4]), vec![0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(lambda_path(&traj, &b, &e).unwrap(), vec![2.0, 4.0, 8.0, 16.0]);
        assert_eq!(lambda_path(&traj, &b, &b).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn v_from_q_examples() {
        let e = Policy::Tabular(TabularPolicy::deterministic(&[1], 2).unwrap());
        let q = |_t: usize, _s: StateRef<'_>, a: usize| if a == 0 { 1.0 } else { 3.0 };
        assert_eq!(v_from_q(&q, &e, 0, StateRef::Discrete(0)), 3.0);
        assert_eq!(v_from_q(&q, &Policy::uniform(2), 0, StateRef::Discrete(0)), 2.0);
    }

    #[test]
    fn prepared_matches_direct_queries() {
        let space = SpaceSpec::real(1, 2, 2).unwrap();
        let traj = Trajectory::new(
            States::Real { dim: 1, values: vec![0.5, -1.0, 2.0] },
            vec![1, 0, 1],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let data = Dataset::new(space, vec![traj.clone()], (0.0, 1.0)).unwrap();
        let b = logistic(0.9, 0.05);
        let e = Policy::mixture(logistic(0.2, 0.1), 0.25).unwrap();
        let prep = Prepared::new(&data, &b, &e).unwrap();
        let lam = lambda_path(&traj, &b, &e).unwrap();
        for t in 0..3 {
            assert!((prep.lambda(0, t) - lam[t]).abs() <= 1e-15 * lam[t].abs());
            let probs = e.probs(t, traj.state(t));
            assert_eq!(prep.target_probs(0, t), &probs[..]);
        }
        assert_eq!(prep.lambda_prev(0, 0), 1.0);
    }

    #[test]
    fn prepared_shared_base_matches_generic_path() {
        let space = SpaceSpec::finite(3, 3, 1).unwrap();
        let base = Policy::Tabular(TabularPolicy::deterministic(&[2, 0, 1], 3).unwrap());
        let b = Policy::mixture(base.clone(), 0.8).unwrap();
        let e = Policy::mixture(base, 0.1).unwrap();
        let traj = Trajectory::new(States::Discrete(vec![0, 2]), vec![2, 1], vec![0.0, 0.0]).unwrap();
        let data = Dataset::new(space, vec![traj.clone()], (0.0, 1.0)).unwrap();
        let prep = Prepared::new(&data, &b, &e).unwrap();
        let lam = lambda_path(&traj, &b, &e).unwrap();
        for t in 0..2 {
            assert!((prep.lambda(0, t) - lam[t]).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn lambda_recursion_and_product(
            states in prop::collection::vec(-5.0f64..5.0, 1..12),
            seed in any::<u64>(),
        ) {
            use rand::Rng as _;
            let mut r = crate::rng::root(seed);
            let actions: Vec<usize> = states.iter().map(|_| r.random_range(0..2)).collect();
            let n = states.len();
            let traj = Trajectory::new(States::Real { dim: 1, values: states }, actions, vec![0.0; n]).unwrap();
            let b = logistic(0.9, 0.05);
            let e = logistic(0.2, 0.1);
            let lam = lambda_path(&traj, &b, &e).unwrap();
            let mut direct = 1.0;
            for t in 0..n {
                let et = eta(&b, &e, t, traj.state(t), traj.action(t)).unwrap();
                if t > 0 {
                    prop_assert_eq!(lam[t], lam[t - 1] * et);
                }
                direct *= et;
            }
            prop_assert!((lam[n - 1] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            prop_assert!(lambda_path(&traj, &e, &e).unwrap().iter().all(|x| *x == 1.0));
        }

        #[test]
        fn v_from_q_is_a_dot_product(
            q in prop::collection::vec(-10.0f64..10.0, 4),
            w in prop::collection::vec(0.01f64..1.0, 4),
        ) {
            let z: f64 = w.iter().sum();
            let mut probs: Vec<f64> = w.iter().map(|x| x / z).collect();
            let head: f64 = probs[..3].iter().sum();
            probs[3] = 1.0 - head;
            let pol = Policy::Tabular(TabularPolicy::stationary(vec![probs.clone()]).unwrap());
            let qf = |_t: usize, _s: StateRef<'_>, a: usize| q[a];
            let dot: f64 = probs.iter().zip(&q).map(|(p, v)| p * v).sum();
            prop_assert!((v_from_q(&qf, &pol, 0, StateRef::Discrete(0)) - dot).abs() < 1e-12);
        }
    }
}
