//! Environment simulators and the construction of evaluation policies.

mod cliff;
mod mountain_car;
mod qlearning;
mod synthetic;

use rayon::prelude::*;

pub use cliff::CliffWalk;
pub use mountain_car::MountainCar;
pub use qlearning::{train_q_learning, QFeatures, QLearnConfig};
pub use synthetic::SyntheticGaussianMdp;

use crate::data::{Dataset, SpaceSpec, StateRef, States, Trajectory};
use crate::error::Result;
use crate::policy::Policy;
use crate::rng::{self, Rng};

/// A finite-horizon simulator. Implementations are stateless; all randomness
/// comes from the generator passed in.
pub trait Environment: Sync {
    type State: Clone + Send;

    fn space(&self) -> SpaceSpec;

    fn reward_bounds(&self) -> (f64, f64);

    fn reset(&self, rng: &mut Rng) -> Self::State;

    /// Reward `r_t` for action `a` in state `s` at step `t`, and the next state.
    fn step(&self, t: usize, s: &Self::State, a: usize, rng: &mut Rng) -> (f64, Self::State);

    fn view(state: &Self::State) -> StateRef<'_>;

    /// Absorbing goal states end q-learning episodes early.
    fn is_terminal(&self, _s: &Self::State) -> bool {
        false
    }
}

/// `(1 − α)·π^d + α·uniform`.
pub fn mixture_policy(pi_d: Policy, alpha: f64) -> Result<Policy> {
    Policy::mixture(pi_d, alpha)
}

/// One episode of `T + 1` steps under `policy`.
pub fn rollout<E: Environment>(env: &E, policy: &Policy, rng: &mut Rng) -> Trajectory {
    let space = env.space();
    let steps = space.steps();
    let mut states = States::with_capacity(space.state, steps);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut s = env.reset(rng);
    for t in 0..steps {
        let view = E::view(&s);
        let a = policy.sample(t, view, rng);
        states.push(view);
        let (r, next) = env.step(t, &s, a, rng);
        actions.push(a);
        rewards.push(r);
        s = next;
    }
    Trajectory::new(states, actions, rewards).expect("rollout produces consistent lengths")
}

/// `n` i.i.d. trajectories; trajectory `i` uses stream `i` of `seed`, so the
/// result does not depend on the number of worker threads.
pub fn simulate<E: Environment>(env: &E, policy: &Policy, n: usize, seed: u64) -> Result<Dataset> {
    let space = env.space();
    policy.check_space(&space)?;
    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| rollout(env, policy, &mut rng::stream(seed, i as u64)))
        .collect();
    Dataset::new(space, trajectories, env.reward_bounds())
}

/// On-policy Monte Carlo estimate of `E_π[Σ_t r_t]` and its standard error.
pub fn mean_return<E: Environment>(env: &E, policy: &Policy, n: usize, seed: u64) -> Result<(f64, f64)> {
    policy.check_space(&env.space())?;
    let returns: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| rollout(env, policy, &mut rng::stream(seed, i as u64)).total_reward())
        .collect();
    Ok(mean_and_se(&returns))
}

/// Sample mean and `sd/√n` (sd with denominator `n − 1`; zero when `n = 1`).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
